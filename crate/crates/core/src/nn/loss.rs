use crate::error::{CoreError, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::DenseMatrix;
use crate::nn::model::{backward, forward, Backward, InputGrads, ModelSpec};
use crate::nn::params::{GradientSet, ModelParams};

/// Mean softmax cross-entropy over `nodes`, and optionally its gradient with
/// respect to the logits (rows outside `nodes` are zero).
pub fn softmax_cross_entropy(
    logits: &DenseMatrix,
    labels: &[usize],
    nodes: &[usize],
    with_grad: bool,
) -> Result<(f64, Option<DenseMatrix>)> {
    if nodes.is_empty() {
        return Err(CoreError::EmptyNodeSet);
    }
    let inv = 1.0 / nodes.len() as f64;
    let mut grad = with_grad.then(|| DenseMatrix::zeros(logits.rows, logits.cols));
    let mut total = 0.0;
    for &v in nodes {
        let row = logits.row(v);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        total += log_norm - row[labels[v]];
        if let Some(g) = grad.as_mut() {
            let g_row = g.row_mut(v);
            for (gc, &z) in g_row.iter_mut().zip(row) {
                *gc += (z - log_norm).exp() * inv;
            }
            g_row[labels[v]] -= inv;
        }
    }
    Ok((total * inv, grad))
}

/// Fraction of `nodes` whose arg-max logit equals the label; ties go to the
/// lowest class index.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(CoreError::EmptyNodeSet);
    }
    let correct = nodes
        .iter()
        .filter(|&&v| argmax(logits.row(v)) == labels[v])
        .count();
    Ok(correct as f64 / nodes.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &z) in row.iter().enumerate().skip(1) {
        if z > row[best] {
            best = c;
        }
    }
    best
}

/// A fixed supervised objective: model, graph inputs, labels and the node set
/// the loss averages over. `weight_decay` adds `wd/2 · ‖θ‖²`.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub spec: &'a ModelSpec,
    pub adj: &'a NormalizedAdjacency,
    pub features: &'a DenseMatrix,
    pub labels: &'a [usize],
    pub nodes: &'a [usize],
    pub weight_decay: f64,
}

impl<'a> Problem<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        adj: &'a NormalizedAdjacency,
        features: &'a DenseMatrix,
        labels: &'a [usize],
        nodes: &'a [usize],
    ) -> Self {
        Self {
            spec,
            adj,
            features,
            labels,
            nodes,
            weight_decay: 0.0,
        }
    }

    pub fn with_nodes(self, nodes: &'a [usize]) -> Self {
        Self { nodes, ..self }
    }

    pub fn with_features(self, features: &'a DenseMatrix) -> Self {
        Self { features, ..self }
    }

    pub fn with_adjacency(self, adj: &'a NormalizedAdjacency) -> Self {
        Self { adj, ..self }
    }

    fn decay_loss(&self, params: &ModelParams) -> f64 {
        if self.weight_decay == 0.0 {
            0.0
        } else {
            0.5 * self.weight_decay * params.norm().powi(2)
        }
    }

    pub fn logits(&self, params: &ModelParams, dropout_seed: Option<u64>) -> Result<DenseMatrix> {
        Ok(forward(self.spec, params, self.adj, self.features, dropout_seed)?.0)
    }

    pub fn loss_at(&self, params: &ModelParams, dropout_seed: Option<u64>) -> Result<f64> {
        if self.nodes.is_empty() {
            return Err(CoreError::EmptyNodeSet);
        }
        let logits = self.logits(params, dropout_seed)?;
        let (ce, _) = softmax_cross_entropy(&logits, self.labels, self.nodes, false)?;
        Ok(ce + self.decay_loss(params))
    }

    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, GradientSet)> {
        let (loss, back) = self.loss_and_backward(params, dropout_seed, InputGrads::default())?;
        Ok((loss, back.params))
    }

    /// Loss plus the full backward pass, including requested input gradients.
    pub fn loss_and_backward(
        &self,
        params: &ModelParams,
        dropout_seed: Option<u64>,
        want: InputGrads,
    ) -> Result<(f64, Backward)> {
        if self.nodes.is_empty() {
            return Err(CoreError::EmptyNodeSet);
        }
        let (logits, cache) = forward(self.spec, params, self.adj, self.features, dropout_seed)?;
        let (ce, g_logits) = softmax_cross_entropy(&logits, self.labels, self.nodes, true)?;
        let g_logits = g_logits.expect("gradient requested");
        let mut back = backward(
            self.spec,
            params,
            self.adj,
            self.features,
            &cache,
            &g_logits,
            want,
        )?;
        if self.weight_decay != 0.0 {
            for (g, w) in back.params.layers.iter_mut().zip(&params.layers) {
                g.add_scaled(w, self.weight_decay);
            }
        }
        Ok((ce + self.decay_loss(params), back))
    }

    pub fn accuracy(&self, params: &ModelParams, nodes: &[usize]) -> Result<f64> {
        accuracy(&self.logits(params, None)?, self.labels, nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph};
    use crate::nn::model::ModelKind;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = DenseMatrix::zeros(3, 7);
        let (l, g) = softmax_cross_entropy(&logits, &[0, 3, 6], &[0, 1, 2], true).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-15);
        assert!((l - 1.9459).abs() < 1e-4);
        // Each gradient row sums to zero because softmax rows sum to one.
        let g = g.unwrap();
        for r in 0..3 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn empty_node_set_is_an_error() {
        let logits = DenseMatrix::zeros(2, 2);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 1], &[], false),
            Err(CoreError::EmptyNodeSet)
        ));
        assert!(accuracy(&logits, &[0, 1], &[]).is_err());
    }

    #[test]
    fn accuracy_ties_go_low() {
        let logits = DenseMatrix::zeros(4, 2);
        assert_eq!(accuracy(&logits, &[0, 0, 1, 1], &[0, 1, 2, 3]).unwrap(), 0.5);
        assert_eq!(accuracy(&logits, &[0, 0, 0, 0], &[0, 1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn zero_weights_give_ln_k() {
        let g = Graph::new(
            3,
            &[(0, 1)],
            DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0, 1.0]]).unwrap(),
            vec![0, 1, 2],
        )
        .unwrap();
        let a = normalize_adjacency(&g);
        let spec = ModelSpec::new(ModelKind::Gcn2, 2, 4, 3).with_dropout(0.0);
        let mut p = spec.init_params(0);
        p.layers.iter_mut().for_each(|w| w.scale_in_place(0.0));
        let nodes = [0, 1, 2];
        let mut prob = Problem::new(&spec, &a, &g.features, &g.labels, &nodes);
        prob.weight_decay = 5e-4;
        let (l, grads) = prob.loss_and_grad(&p, None).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
        assert_eq!(l, prob.loss_at(&p, None).unwrap());
        assert!(grads.layers.iter().all(|w| w.is_finite()));
    }
}
