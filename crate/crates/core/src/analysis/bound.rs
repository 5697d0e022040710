use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec::{map_indexed, Execution};
use crate::linalg::DenseMatrix;
use crate::nn::{GradientSet, ModelParams, Problem};
use crate::seed::{self, Stream};

/// Size of the sampled weight perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpnessRadius {
    /// `‖δ_i‖ = ρ‖W_i‖` for every layer.
    PerLayer(f64),
    /// `‖δ‖ = ρ` over the whole flattened parameter vector.
    Global(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessConfig {
    pub radius: SharpnessRadius,
    pub n_samples: usize,
    pub seed: u64,
}

impl SharpnessConfig {
    pub fn per_layer(rho: f64) -> Self {
        Self {
            radius: SharpnessRadius::PerLayer(rho),
            n_samples: 20,
            seed: 0,
        }
    }
}

fn surface_sample(params: &ModelParams, radius: SharpnessRadius, seed: u64, j: u64) -> GradientSet {
    let mut rng = seed::rng(seed, Stream::Sharpness, j);
    let mut layers: Vec<DenseMatrix> = params
        .layers
        .iter()
        .map(|w| DenseMatrix {
            rows: w.rows,
            cols: w.cols,
            data: (0..w.data.len()).map(|_| StandardNormal.sample(&mut rng)).collect(),
        })
        .collect();
    match radius {
        SharpnessRadius::PerLayer(rho) => {
            for (d, w) in layers.iter_mut().zip(&params.layers) {
                let s = rho * w.frobenius_norm() / d.frobenius_norm();
                d.scale_in_place(if s.is_finite() { s } else { 0.0 });
            }
        }
        SharpnessRadius::Global(rho) => {
            let norm = layers.iter().map(DenseMatrix::sum_sq).sum::<f64>().sqrt();
            layers.iter_mut().for_each(|d| d.scale_in_place(rho / norm));
        }
    }
    GradientSet { layers }
}

/// `max_j L(θ + δ_j) − L(θ)` over random surface points `δ_j`. Sample `j`
/// depends only on `(seed, j)`, so more samples never lower the estimate.
/// This is a lower bound on the true maximum.
pub fn sampled_sharpness(
    problem: &Problem<'_>,
    params: &ModelParams,
    cfg: &SharpnessConfig,
    exec: Execution,
) -> Result<f64> {
    if cfg.n_samples == 0 {
        return Err(CoreError::InvalidConfig("sharpness n_samples must be >= 1".into()));
    }
    let base = problem.loss_at(params, None)?;
    let rises = map_indexed(exec, cfg.n_samples, |j| {
        let delta = surface_sample(params, cfg.radius, cfg.seed, j as u64);
        Ok(problem.loss_at(&params.offset(&delta, 1.0), None)? - base)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(rises.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub train_loss: f64,
    pub all_nodes_loss: f64,
    pub gap: f64,
    pub sharpness: f64,
}

/// Loss over `all_nodes` minus the loss over `problem.nodes`, plus sampled
/// sharpness of the training loss.
pub fn generalization_gap(
    problem: &Problem<'_>,
    params: &ModelParams,
    all_nodes: &[usize],
    sharpness: &SharpnessConfig,
    exec: Execution,
) -> Result<GapReport> {
    let train_loss = problem.loss_at(params, None)?;
    let all_nodes_loss = problem.with_nodes(all_nodes).loss_at(params, None)?;
    Ok(GapReport {
        train_loss,
        all_nodes_loss,
        gap: all_nodes_loss - train_loss,
        sharpness: sampled_sharpness(problem, params, sharpness, exec)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub m: f64,
    pub confidence_delta: f64,
    pub rho: f64,
    #[serde(default = "default_samples")]
    pub sharpness_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    20
}

/// The closed-form terms of the bound for a model with `d` parameters,
/// `n0` training nodes and parameter norm `theta_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerms {
    pub d: usize,
    pub n0: usize,
    pub theta_norm: f64,
    pub chi_tail_term: f64,
    pub kl_term: f64,
    pub confidence_term: f64,
}

impl BoundTerms {
    pub fn compute(d: usize, n0: usize, theta_norm: f64, m: f64, confidence_delta: f64, rho: f64) -> Result<Self> {
        if d == 0 || n0 == 0 {
            return Err(CoreError::InvalidConfig("bound needs d >= 1 and N0 >= 1".into()));
        }
        let df = d as f64;
        let ratio = m * m / df;
        // Tolerates the rounding in (√d)² ≠ d.
        if ratio.is_nan() || ratio < 1.0 - 1e-12 {
            return Err(CoreError::InvalidConfig(format!("m = {m} is below sqrt(d) = {}", df.sqrt())));
        }
        if !(confidence_delta > 0.0 && confidence_delta < 1.0) {
            return Err(CoreError::InvalidConfig("confidence_delta must be in (0, 1)".into()));
        }
        if rho.is_nan() || rho <= 0.0 {
            return Err(CoreError::InvalidConfig("rho must be > 0".into()));
        }
        let ratio = ratio.max(1.0);
        let log_chi = 0.5 * df * (ratio.ln() + 1.0 - ratio);
        let sqrt_n0 = (n0 as f64).sqrt();
        let kl_term = (1.0 + df * (m * m * theta_norm * theta_norm / (df * rho * rho)).ln_1p()) / (2.0 * sqrt_n0);
        let confidence_term = ((3.0 / confidence_delta).ln() + 0.25) / sqrt_n0;
        Ok(Self {
            d,
            n0,
            theta_norm,
            chi_tail_term: log_chi.exp(),
            kl_term,
            confidence_term,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub m: f64,
    pub rho: f64,
    pub confidence_delta: f64,
    pub d: usize,
    pub n0: usize,
    pub theta_norm: f64,
    pub train_loss: f64,
    /// Sampled lower bound on the sharpness inside `‖δ‖ ≤ ρ`.
    pub sharpness_estimate: f64,
    pub chi_tail_term: f64,
    pub kl_term: f64,
    pub confidence_term: f64,
    /// The `Θ(K·ε_all)` term has no computable form and is left out.
    pub omitted_constant: bool,
}

impl BoundReport {
    /// Right-hand side without the omitted constant.
    pub fn partial_total(&self) -> f64 {
        self.train_loss + self.sharpness_estimate.max(0.0) + self.chi_tail_term + self.kl_term + self.confidence_term
    }

    pub fn csv_header() -> &'static str {
        "m,rho,confidence_delta,d,n0,theta_norm,train_loss,sharpness_estimate,chi_tail_term,kl_term,confidence_term,partial_total,omitted_constant\n"
    }

    pub fn csv_row(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.m,
            self.rho,
            self.confidence_delta,
            self.d,
            self.n0,
            self.theta_norm,
            self.train_loss,
            self.sharpness_estimate,
            self.chi_tail_term,
            self.kl_term,
            self.confidence_term,
            self.partial_total(),
            self.omitted_constant
        );
        out
    }
}

/// Evaluates the bound's right-hand side terms with `d` the parameter count
/// and `N0 = |problem.nodes|`. Sharpness is sampled on the global sphere of
/// radius `ρ`.
pub fn bound_terms(problem: &Problem<'_>, params: &ModelParams, cfg: &BoundConfig, exec: Execution) -> Result<BoundReport> {
    let theta_norm = params.norm();
    let t = BoundTerms::compute(params.n_entries(), problem.nodes.len(), theta_norm, cfg.m, cfg.confidence_delta, cfg.rho)?;
    let sharp = SharpnessConfig {
        radius: SharpnessRadius::Global(cfg.rho),
        n_samples: cfg.sharpness_samples,
        seed: cfg.seed,
    };
    Ok(BoundReport {
        m: cfg.m,
        rho: cfg.rho,
        confidence_delta: cfg.confidence_delta,
        d: t.d,
        n0: t.n0,
        theta_norm,
        train_loss: problem.loss_at(params, None)?,
        sharpness_estimate: sampled_sharpness(problem, params, &sharp, exec)?,
        chi_tail_term: t.chi_tail_term,
        kl_term: t.kl_term,
        confidence_term: t.confidence_term,
        omitted_constant: true,
    })
}
