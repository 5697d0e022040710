//! The three bias-free models and their reverse-mode gradients.
//!
//! * `Gcn2`: `Â · drop(relu(Â X W1)) · W2`
//! * `Ppnp`: `H = drop(relu(X W1)) W2`, then `Z ← (1-α) Â Z + α H` for `K`
//!   steps starting at `Z = H`
//! * `Mlp3`: `drop(X W1) · W2 · W3`, a purely linear stack
//!
//! Dropout acts on the single hidden activation; the mask is drawn from the
//! dropout seed and kept in the cache so backward differentiates exactly the
//! function that forward evaluated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::DenseMatrix;
use crate::nn::params::{GradientSet, ModelParams};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn2,
    Ppnp,
    Mlp3,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn2 => "gcn2",
            ModelKind::Ppnp => "ppnp",
            ModelKind::Mlp3 => "mlp3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub ppnp_k: usize,
    pub ppnp_alpha: f64,
    pub dropout_rate: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            hidden_dim,
            output_dim,
            ppnp_k: 10,
            ppnp_alpha: 0.1,
            dropout_rate: 0.5,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(CoreError::InvalidConfig("model dims must be positive".into()));
        }
        if !(self.ppnp_alpha > 0.0 && self.ppnp_alpha <= 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "ppnp_alpha {} not in (0, 1]",
                self.ppnp_alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::InvalidConfig(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let (i, h, o) = (self.input_dim, self.hidden_dim, self.output_dim);
        match self.kind {
            ModelKind::Gcn2 | ModelKind::Ppnp => vec![(i, h), (h, o)],
            ModelKind::Mlp3 => vec![(i, h), (h, h), (h, o)],
        }
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams::glorot(&self.layer_shapes(), seed)
    }

    pub fn uses_graph(&self) -> bool {
        self.kind != ModelKind::Mlp3
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let shapes = self.layer_shapes();
        if params.layers.len() != shapes.len() {
            return Err(CoreError::Shape(format!(
                "{:?} expects {} layers, got {}",
                self.kind,
                shapes.len(),
                params.layers.len()
            )));
        }
        for (i, (w, &(r, c))) in params.layers.iter().zip(&shapes).enumerate() {
            if w.shape() != (r, c) {
                return Err(CoreError::Shape(format!(
                    "layer {} is {}x{}, expected {r}x{c}",
                    i + 1,
                    w.rows,
                    w.cols
                )));
            }
        }
        Ok(())
    }
}

/// Inverted-dropout mask with entries `0` or `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> DenseMatrix {
    let mut rng = seed::rng(seed, Stream::Dropout, 0);
    let keep = 1.0 / (1.0 - rate);
    DenseMatrix {
        rows,
        cols,
        data: (0..rows * cols)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `X · W1`
    xw1: DenseMatrix,
    /// GCN2 only: `Â · X · W1`
    z1: Option<DenseMatrix>,
    /// Hidden activation after nonlinearity and dropout.
    hidden: DenseMatrix,
    mask: Option<DenseMatrix>,
    /// GCN2: `hidden · W2`. PPNP: propagation iterates `Z_0 .. Z_K`.
    /// MLP3: `[hidden · W2]`.
    stages: Vec<DenseMatrix>,
}

/// Which input gradients [`backward`] should also return.
#[derive(Debug, Clone, Copy, Default)]
pub struct InputGrads {
    pub features: bool,
    pub adjacency: bool,
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub params: GradientSet,
    pub features: Option<DenseMatrix>,
    /// Gradient with respect to the stored entries of `Â`, aligned with its
    /// value array.
    pub adjacency: Option<Vec<f64>>,
}

fn relu(m: &DenseMatrix) -> DenseMatrix {
    DenseMatrix {
        rows: m.rows,
        cols: m.cols,
        data: m.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// `g ⊙ [pre > 0]`; the derivative at exactly zero is zero.
fn relu_backward(g: &mut DenseMatrix, pre: &DenseMatrix) {
    for (gv, &p) in g.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *gv = 0.0;
        }
    }
}

fn apply_mask(m: &mut DenseMatrix, spec: &ModelSpec, seed: Option<u64>) -> Option<DenseMatrix> {
    match seed {
        Some(s) if spec.dropout_rate > 0.0 => {
            let mask = dropout_mask(m.rows, m.cols, spec.dropout_rate, s);
            m.hadamard_in_place(&mask);
            Some(mask)
        }
        _ => None,
    }
}

/// Computes logits for every node. `dropout_seed` is `Some` in training mode.
pub fn forward(
    spec: &ModelSpec,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    features: &DenseMatrix,
    dropout_seed: Option<u64>,
) -> Result<(DenseMatrix, ForwardCache)> {
    spec.check_params(params)?;
    if features.cols != spec.input_dim {
        return Err(CoreError::Shape(format!(
            "features have {} columns, model expects {}",
            features.cols, spec.input_dim
        )));
    }
    if spec.uses_graph() && adj.n() != features.rows {
        return Err(CoreError::Shape(format!(
            "adjacency is {0}x{0} but features have {1} rows",
            adj.n(),
            features.rows
        )));
    }
    let a = adj.matrix();
    let w = &params.layers;
    let xw1 = features.matmul(&w[0])?;
    match spec.kind {
        ModelKind::Gcn2 => {
            let z1 = a.spmm(&xw1)?;
            let mut hidden = relu(&z1);
            let mask = apply_mask(&mut hidden, spec, dropout_seed);
            let hw2 = hidden.matmul(&w[1])?;
            let logits = a.spmm(&hw2)?;
            Ok((
                logits,
                ForwardCache {
                    xw1,
                    z1: Some(z1),
                    hidden,
                    mask,
                    stages: vec![hw2],
                },
            ))
        }
        ModelKind::Ppnp => {
            let mut hidden = relu(&xw1);
            let mask = apply_mask(&mut hidden, spec, dropout_seed);
            let h = hidden.matmul(&w[1])?;
            let stages = propagate(a, &h, spec.ppnp_k, spec.ppnp_alpha)?;
            let logits = stages.last().cloned().unwrap_or_else(|| h.clone());
            Ok((
                logits,
                ForwardCache {
                    xw1,
                    z1: None,
                    hidden,
                    mask,
                    stages,
                },
            ))
        }
        ModelKind::Mlp3 => {
            let mut hidden = xw1.clone();
            let mask = apply_mask(&mut hidden, spec, dropout_seed);
            let a2 = hidden.matmul(&w[1])?;
            let logits = a2.matmul(&w[2])?;
            Ok((
                logits,
                ForwardCache {
                    xw1,
                    z1: None,
                    hidden,
                    mask,
                    stages: vec![a2],
                },
            ))
        }
    }
}

/// Personalized-PageRank propagation; returns `[Z_0 = H, Z_1, .., Z_K]`.
pub fn propagate(
    a: &crate::linalg::CsrMatrix,
    h: &DenseMatrix,
    k: usize,
    alpha: f64,
) -> Result<Vec<DenseMatrix>> {
    let mut stages = Vec::with_capacity(k + 1);
    stages.push(h.clone());
    for _ in 0..k {
        let mut z = a.spmm(stages.last().expect("non-empty"))?;
        z.scale_in_place(1.0 - alpha);
        z.add_scaled(h, alpha);
        stages.push(z);
    }
    Ok(stages)
}

/// Backpropagates `g_logits = ∂L/∂logits` through a cached forward pass.
pub fn backward(
    spec: &ModelSpec,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    features: &DenseMatrix,
    cache: &ForwardCache,
    g_logits: &DenseMatrix,
    want: InputGrads,
) -> Result<Backward> {
    let a = adj.matrix();
    let w = &params.layers;
    let mut g_adj = want.adjacency.then(|| vec![0.0; a.nnz()]);
    let mut accumulate_adj = |left: &DenseMatrix, right: &DenseMatrix, scale: f64| {
        if let Some(acc) = g_adj.as_mut() {
            for (dst, v) in acc.iter_mut().zip(a.pattern_outer(left, right)) {
                *dst += scale * v;
            }
        }
    };

    let (layers, g_xw1) = match spec.kind {
        ModelKind::Gcn2 => {
            let hw2 = &cache.stages[0];
            accumulate_adj(g_logits, hw2, 1.0);
            let g_hw2 = a.spmm(g_logits)?;
            let dw2 = cache.hidden.matmul_tn(&g_hw2)?;
            let mut g_hidden = g_hw2.matmul_nt(&w[1])?;
            if let Some(mask) = &cache.mask {
                g_hidden.hadamard_in_place(mask);
            }
            let z1 = cache.z1.as_ref().expect("gcn cache holds z1");
            relu_backward(&mut g_hidden, z1);
            accumulate_adj(&g_hidden, &cache.xw1, 1.0);
            let g_xw1 = a.spmm(&g_hidden)?;
            let dw1 = features.matmul_tn(&g_xw1)?;
            (vec![dw1, dw2], g_xw1)
        }
        ModelKind::Ppnp => {
            let alpha = spec.ppnp_alpha;
            let mut g_z = g_logits.clone();
            let mut g_h = DenseMatrix::zeros(g_logits.rows, g_logits.cols);
            for k in (1..cache.stages.len()).rev() {
                g_h.add_scaled(&g_z, alpha);
                accumulate_adj(&g_z, &cache.stages[k - 1], 1.0 - alpha);
                g_z = a.spmm(&g_z)?;
                g_z.scale_in_place(1.0 - alpha);
            }
            g_h.add_scaled(&g_z, 1.0);
            let dw2 = cache.hidden.matmul_tn(&g_h)?;
            let mut g_hidden = g_h.matmul_nt(&w[1])?;
            if let Some(mask) = &cache.mask {
                g_hidden.hadamard_in_place(mask);
            }
            relu_backward(&mut g_hidden, &cache.xw1);
            let dw1 = features.matmul_tn(&g_hidden)?;
            (vec![dw1, dw2], g_hidden)
        }
        ModelKind::Mlp3 => {
            let a2 = &cache.stages[0];
            let dw3 = a2.matmul_tn(g_logits)?;
            let g_a2 = g_logits.matmul_nt(&w[2])?;
            let dw2 = cache.hidden.matmul_tn(&g_a2)?;
            let mut g_hidden = g_a2.matmul_nt(&w[1])?;
            if let Some(mask) = &cache.mask {
                g_hidden.hadamard_in_place(mask);
            }
            let dw1 = features.matmul_tn(&g_hidden)?;
            (vec![dw1, dw2, dw3], g_hidden)
        }
    };
    let g_features = if want.features {
        Some(g_xw1.matmul_nt(&w[0])?)
    } else {
        None
    };
    Ok(Backward {
        params: GradientSet { layers },
        features: g_features,
        adjacency: g_adj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph};

    fn one_node() -> (NormalizedAdjacency, DenseMatrix) {
        let g = Graph::new(1, &[], DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap(), vec![0]).unwrap();
        (normalize_adjacency(&g), g.features)
    }

    fn scalar_params(w: f64, v: f64) -> ModelParams {
        ModelParams::new(
            vec![
                DenseMatrix::from_vec(1, 1, vec![w]).unwrap(),
                DenseMatrix::from_vec(1, 1, vec![v]).unwrap(),
            ],
            vec![true, false],
        )
        .unwrap()
    }

    #[test]
    fn gcn_single_node() {
        let (a, x) = one_node();
        let spec = ModelSpec::new(ModelKind::Gcn2, 1, 1, 1).with_dropout(0.0);
        let (logits, _) = forward(&spec, &scalar_params(2.0, 3.0), &a, &x, None).unwrap();
        assert_eq!(logits.data, vec![6.0]);
        let (logits, _) = forward(&spec, &scalar_params(-2.0, 3.0), &a, &x, None).unwrap();
        assert_eq!(logits.data, vec![0.0]);
    }

    fn small_graph() -> (NormalizedAdjacency, DenseMatrix) {
        let x = DenseMatrix::from_rows(&[
            vec![1.0, 0.5],
            vec![-0.3, 2.0],
            vec![0.7, -1.0],
            vec![0.2, 0.1],
        ])
        .unwrap();
        let g = Graph::new(4, &[(0, 1), (1, 2), (2, 3)], x, vec![0, 1, 0, 1]).unwrap();
        (normalize_adjacency(&g), g.features)
    }

    #[test]
    fn ppnp_alpha_one_is_mlp_head() {
        let (a, x) = small_graph();
        let mut spec = ModelSpec::new(ModelKind::Ppnp, 2, 3, 2).with_dropout(0.0);
        let p = spec.init_params(5);
        spec.ppnp_alpha = 1.0;
        let (logits, _) = forward(&spec, &p, &a, &x, None).unwrap();
        let head = relu(&x.matmul(&p.layers[0]).unwrap()).matmul(&p.layers[1]).unwrap();
        assert_eq!(logits, head);
        spec.ppnp_alpha = 0.1;
        spec.ppnp_k = 0;
        let (logits, _) = forward(&spec, &p, &a, &x, None).unwrap();
        assert_eq!(logits, head);
    }

    #[test]
    fn propagation_is_linear() {
        let (a, _) = small_graph();
        let h1 = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let h2 = DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![2.0, 1.0], vec![0.0, 4.0], vec![1.5, -0.5]]).unwrap();
        let mut combo = h1.scale(0.3);
        combo.add_scaled(&h2, -1.7);
        let z = propagate(a.matrix(), &combo, 10, 0.1).unwrap().pop().unwrap();
        let mut expect = propagate(a.matrix(), &h1, 10, 0.1).unwrap().pop().unwrap().scale(0.3);
        expect.add_scaled(&propagate(a.matrix(), &h2, 10, 0.1).unwrap().pop().unwrap(), -1.7);
        assert!(z.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let (a, x) = small_graph();
        let spec = ModelSpec::new(ModelKind::Gcn2, 2, 3, 2);
        let mut p = spec.init_params(0);
        p.layers[1] = DenseMatrix::zeros(3, 5);
        let err = forward(&spec, &p, &a, &x, None).unwrap_err().to_string();
        assert!(err.contains("layer 2"), "{err}");
    }

    #[test]
    fn dropout_is_seeded() {
        let (a, x) = small_graph();
        let spec = ModelSpec::new(ModelKind::Gcn2, 2, 8, 2);
        let p = spec.init_params(1);
        let (l1, _) = forward(&spec, &p, &a, &x, Some(9)).unwrap();
        let (l2, _) = forward(&spec, &p, &a, &x, Some(9)).unwrap();
        let (l3, _) = forward(&spec, &p, &a, &x, Some(10)).unwrap();
        assert_eq!(l1, l2);
        assert_ne!(l1, l3);
        let mask = dropout_mask(100, 10, 0.5, 3);
        let kept = mask.data.iter().filter(|&&v| v == 2.0).count();
        assert!((400..600).contains(&kept));
    }
}
