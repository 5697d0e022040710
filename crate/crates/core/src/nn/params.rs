use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::DenseMatrix;

/// Ordered layer weights plus the mask of layers that receive weight
/// perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub layers: Vec<DenseMatrix>,
    pub awp_mask: Vec<bool>,
}

/// Per-layer tensors shaped like a [`ModelParams`]: gradients, perturbations,
/// directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub layers: Vec<DenseMatrix>,
}

impl ModelParams {
    pub fn new(layers: Vec<DenseMatrix>, awp_mask: Vec<bool>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CoreError::Shape("model has no layers".into()));
        }
        if layers.len() != awp_mask.len() {
            return Err(CoreError::Shape(format!(
                "{} layers but awp_mask of length {}",
                layers.len(),
                awp_mask.len()
            )));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].cols != w[1].rows {
                return Err(CoreError::Shape(format!(
                    "layer {} is {}x{} but layer {} is {}x{}",
                    i + 1,
                    w[0].rows,
                    w[0].cols,
                    i + 2,
                    w[1].rows,
                    w[1].cols
                )));
            }
        }
        Ok(Self { layers, awp_mask })
    }

    /// Glorot-uniform initialization, one independent stream per layer.
    pub fn glorot(shapes: &[(usize, usize)], seed: u64) -> Self {
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(rows, cols))| {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                let mut rng = crate::seed::rng(seed, crate::seed::Stream::Init, i as u64);
                let data = (0..rows * cols)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                DenseMatrix { rows, cols, data }
            })
            .collect();
        let mut awp_mask = vec![false; shapes.len()];
        awp_mask[0] = true;
        Self { layers, awp_mask }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total number of weight entries.
    pub fn n_entries(&self) -> usize {
        self.layers.iter().map(|w| w.data.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.layers.iter().map(DenseMatrix::sum_sq).sum::<f64>().sqrt()
    }

    pub fn zeros_like(&self) -> GradientSet {
        GradientSet {
            layers: self
                .layers
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows, w.cols))
                .collect(),
        }
    }

    /// `self + scale · delta`, keeping the mask.
    pub fn offset(&self, delta: &GradientSet, scale: f64) -> Self {
        let mut out = self.clone();
        for (w, d) in out.layers.iter_mut().zip(&delta.layers) {
            w.add_scaled(d, scale);
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|w| w.data.iter().copied()).collect()
    }

    /// Mutable access to flat entry `k` in layer order.
    pub fn entry_mut(&mut self, mut k: usize) -> &mut f64 {
        for w in &mut self.layers {
            if k < w.data.len() {
                return &mut w.data[k];
            }
            k -= w.data.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseMatrix::is_finite)
    }
}

impl GradientSet {
    pub fn norm(&self) -> f64 {
        self.layers.iter().map(DenseMatrix::sum_sq).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|w| w.data.iter().copied()).collect()
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &GradientSet, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(b, s);
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            layers: self.layers.iter().map(|w| w.scale(s)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|w| w.data.iter().all(|&v| v == 0.0))
    }

    /// Rebuilds a set with the given shapes from a flat vector.
    pub fn from_flat(like: &ModelParams, flat: &[f64]) -> Self {
        let mut offset = 0;
        let layers = like
            .layers
            .iter()
            .map(|w| {
                let n = w.data.len();
                let m = DenseMatrix {
                    rows: w.rows,
                    cols: w.cols,
                    data: flat[offset..offset + n].to_vec(),
                };
                offset += n;
                m
            })
            .collect();
        Self { layers }
    }

    pub fn shapes_match(&self, params: &ModelParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(a, b)| a.same_shape(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_is_bounded_and_seeded() {
        let p = ModelParams::glorot(&[(3, 4), (4, 2)], 11);
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(p.layers[0].data.iter().all(|v| v.abs() < limit));
        assert_eq!(p, ModelParams::glorot(&[(3, 4), (4, 2)], 11));
        assert_ne!(p, ModelParams::glorot(&[(3, 4), (4, 2)], 12));
        assert_eq!(p.awp_mask, vec![true, false]);
        assert_eq!(p.n_entries(), 20);
    }

    #[test]
    fn rejects_broken_chains() {
        let err = ModelParams::new(
            vec![DenseMatrix::zeros(2, 3), DenseMatrix::zeros(4, 1)],
            vec![true, false],
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 2"));
        assert!(ModelParams::new(vec![], vec![]).is_err());
    }

    #[test]
    fn json_shape() {
        let p = ModelParams::glorot(&[(1, 2)], 0);
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["layers"][0]["rows"], 1);
        assert_eq!(v["awp_mask"][0], true);
        let back: ModelParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
