use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec::{map_indexed, Execution};
use crate::graph::NormalizedAdjacency;
use crate::nn::{InputGrads, ModelParams, Problem};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessTarget {
    Features,
    /// The stored entries of `Â` (its sparsity pattern only).
    NormalizedAdjacency,
}

impl SmoothnessTarget {
    pub fn name(self) -> &'static str {
        match self {
            Self::Features => "features",
            Self::NormalizedAdjacency => "normalized_adjacency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothnessConfig {
    pub noise_std: f64,
    pub n_samples: usize,
    pub target: SmoothnessTarget,
    pub seed: u64,
}

impl Default for SmoothnessConfig {
    fn default() -> Self {
        Self {
            noise_std: 5e-4,
            n_samples: 100,
            target: SmoothnessTarget::Features,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessResult {
    pub target: SmoothnessTarget,
    pub mean_grad_norm: f64,
    pub norms: Vec<f64>,
}

/// Mean `‖∇_target L‖₂` over noisy copies of the target input, in
/// evaluation mode.
pub fn input_gradient_smoothness(
    problem: &Problem<'_>,
    params: &ModelParams,
    cfg: &SmoothnessConfig,
    exec: Execution,
) -> Result<SmoothnessResult> {
    if cfg.n_samples == 0 {
        return Err(CoreError::InvalidConfig("n_samples must be >= 1".into()));
    }
    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|_| CoreError::InvalidConfig(format!("noise_std {} must be >= 0", cfg.noise_std)))?;
    let norms = map_indexed(exec, cfg.n_samples, |j| -> Result<f64> {
        let mut rng = seed::rng(cfg.seed, Stream::Noise, j as u64);
        match cfg.target {
            SmoothnessTarget::Features => {
                let mut x = problem.features.clone();
                x.data.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                let want = InputGrads {
                    features: true,
                    adjacency: false,
                };
                let (_, back) = problem.with_features(&x).loss_and_backward(params, None, want)?;
                Ok(back.features.map_or(0.0, |g| g.frobenius_norm()))
            }
            SmoothnessTarget::NormalizedAdjacency => {
                let a = problem.adj.matrix();
                let values = a.values.iter().map(|v| v + noise.sample(&mut rng)).collect();
                let noisy = NormalizedAdjacency(a.with_values(values));
                let want = InputGrads {
                    features: false,
                    adjacency: true,
                };
                let (_, back) = problem.with_adjacency(&noisy).loss_and_backward(params, None, want)?;
                Ok(back
                    .adjacency
                    .map_or(0.0, |g| g.iter().map(|v| v * v).sum::<f64>().sqrt()))
            }
        }
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(SmoothnessResult {
        target: cfg.target,
        mean_grad_norm: norms.iter().sum::<f64>() / norms.len() as f64,
        norms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessRow {
    pub model_id: String,
    pub target: SmoothnessTarget,
    pub mean_grad_norm: f64,
}

pub fn smoothness_csv(rows: &[SmoothnessRow]) -> String {
    let mut out = String::from("model_id,target,mean_grad_norm\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.model_id, r.target.name(), r.mean_grad_norm);
    }
    out
}
