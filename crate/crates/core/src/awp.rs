//! Adversarial weight perturbation and its weighted / truncated variants.
//!
//! The perturbation is one projected gradient-ascent step,
//! `δ̂* = Π_B(∇θ L(θ))`, restricted to the layers selected for perturbation,
//! where `B` is a per-layer ball of radius `ρ·‖W_i‖`. The WT-AWP objective is
//! `λ·L(θ + [δ̂*, 0]) + (1-λ)·L(θ)`, optimized with the first-order gradient
//! that treats `δ̂*` as a constant.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec::Execution;
use crate::gradcheck::fd_gradient;
use crate::linalg::DenseMatrix;
use crate::nn::{GradientSet, ModelParams, Problem};

/// How the ascent direction is mapped into the per-layer ball.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Scale back onto the surface only when outside; interior points are
    /// kept as they are.
    #[default]
    Ball,
    /// Always scale each non-zero layer onto the surface, so that
    /// `‖δ_i‖ = ρ‖W_i‖` exactly.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwpConfig {
    pub rho: f64,
    pub lambda: f64,
    pub pgd_steps: usize,
    pub pgd_lr: f64,
    pub perturb_layers: Vec<bool>,
    #[serde(default)]
    pub projection: Projection,
}

impl AwpConfig {
    /// Perturbs the first of `n_layers` layers only.
    pub fn first_layer(rho: f64, lambda: f64, n_layers: usize) -> Self {
        let mut perturb_layers = vec![false; n_layers];
        perturb_layers[0] = true;
        Self {
            rho,
            lambda,
            pgd_steps: 1,
            pgd_lr: 0.2,
            perturb_layers,
            projection: Projection::Ball,
        }
    }

    pub fn all_layers(rho: f64, lambda: f64, n_layers: usize) -> Self {
        Self {
            perturb_layers: vec![true; n_layers],
            ..Self::first_layer(rho, lambda, n_layers)
        }
    }

    pub fn with_projection(mut self, projection: Projection) -> Self {
        self.projection = projection;
        self
    }

    pub fn with_pgd(mut self, steps: usize, lr: f64) -> Self {
        self.pgd_steps = steps;
        self.pgd_lr = lr;
        self
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CoreError::InvalidConfig(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(CoreError::InvalidConfig(format!("rho {} must be >= 0", self.rho)));
        }
        if self.pgd_steps < 1 {
            return Err(CoreError::InvalidConfig("pgd_steps must be >= 1".into()));
        }
        if self.perturb_layers.len() != n_layers {
            return Err(CoreError::InvalidConfig(format!(
                "perturb_layers has {} entries for a {n_layers}-layer model",
                self.perturb_layers.len()
            )));
        }
        Ok(())
    }

    /// True when the objective reduces exactly to the unperturbed loss.
    pub fn is_vanilla(&self) -> bool {
        self.lambda == 0.0 || self.rho == 0.0 || !self.perturb_layers.iter().any(|&p| p)
    }
}

/// Scales each layer of `delta` back onto its ball when it lies outside.
/// A zero radius forces that layer to exactly zero.
pub fn project_to_ball(delta: &GradientSet, radii: &[f64]) -> GradientSet {
    let layers = delta
        .layers
        .iter()
        .zip(radii)
        .map(|(d, &r)| {
            if r <= 0.0 {
                return DenseMatrix::zeros(d.rows, d.cols);
            }
            let norm = d.frobenius_norm();
            if norm > r {
                d.scale(r / norm)
            } else {
                d.clone()
            }
        })
        .collect();
    GradientSet { layers }
}

/// Scales every non-zero layer of `delta` to norm exactly `radii[i]`.
/// Zero layers and zero radii give exact zeros.
pub fn scale_to_sphere(delta: &GradientSet, radii: &[f64]) -> GradientSet {
    let layers = delta
        .layers
        .iter()
        .zip(radii)
        .map(|(d, &r)| {
            let norm = d.frobenius_norm();
            if r <= 0.0 || norm == 0.0 {
                DenseMatrix::zeros(d.rows, d.cols)
            } else {
                d.scale(r / norm)
            }
        })
        .collect();
    GradientSet { layers }
}

fn apply_projection(delta: &GradientSet, radii: &[f64], projection: Projection) -> GradientSet {
    match projection {
        Projection::Ball => project_to_ball(delta, radii),
        Projection::Sphere => scale_to_sphere(delta, radii),
    }
}

/// `ρ·‖W_i‖` for layers in `params.awp_mask`, zero elsewhere.
pub fn layer_radii(params: &ModelParams, rho: f64) -> Vec<f64> {
    layer_radii_masked(params, rho, &params.awp_mask)
}

pub fn layer_radii_masked(params: &ModelParams, rho: f64, mask: &[bool]) -> Vec<f64> {
    params
        .layers
        .iter()
        .zip(mask)
        .map(|(w, &on)| if on { rho * w.frobenius_norm() } else { 0.0 })
        .collect()
}

/// `δ̂*` given the gradient already evaluated at `params` with the same
/// dropout seed.
fn perturbation_from_grad(
    problem: &Problem<'_>,
    params: &ModelParams,
    grad_at_params: &GradientSet,
    cfg: &AwpConfig,
    dropout_seed: Option<u64>,
) -> Result<GradientSet> {
    let radii = layer_radii_masked(params, cfg.rho, &cfg.perturb_layers);
    if cfg.pgd_steps == 1 {
        return Ok(apply_projection(grad_at_params, &radii, cfg.projection));
    }
    // Multi-step ascent, projected once after the last step.
    let mask_to = |g: &GradientSet| project_to_ball(g, &radii.iter().map(|&r| if r > 0.0 { f64::INFINITY } else { 0.0 }).collect::<Vec<_>>());
    let mut delta = mask_to(grad_at_params).scale(cfg.pgd_lr);
    for _ in 1..cfg.pgd_steps {
        let (_, g) = problem.loss_and_grad(&params.offset(&delta, 1.0), dropout_seed)?;
        delta.add_scaled(&mask_to(&g), cfg.pgd_lr);
    }
    Ok(apply_projection(&delta, &radii, cfg.projection))
}

/// The approximate worst-case weight perturbation `δ̂*(θ)`.
pub fn compute_perturbation(
    problem: &Problem<'_>,
    params: &ModelParams,
    cfg: &AwpConfig,
    dropout_seed: Option<u64>,
) -> Result<GradientSet> {
    cfg.validate(params.n_layers())?;
    let (_, g) = problem.loss_and_grad(params, dropout_seed)?;
    perturbation_from_grad(problem, params, &g, cfg, dropout_seed)
}

/// Dropout seeds for the unperturbed and perturbed evaluations of one step.
/// The perturbation itself is computed from the unperturbed pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropoutSeeds {
    pub base: Option<u64>,
    pub perturbed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct WtawpOutput {
    pub loss: f64,
    pub grads: GradientSet,
    pub base_loss: f64,
    /// `None` when the objective reduced to the vanilla loss.
    pub perturbed_loss: Option<f64>,
    /// Gradient of the unperturbed term alone.
    pub base_grads: GradientSet,
}

/// Loss and first-order gradient of `λ·L(θ + [δ̂*, 0]) + (1-λ)·L(θ)`.
///
/// With `λ = 0`, `ρ = 0` or no perturbed layer this is exactly the vanilla
/// loss and gradient computed with `seeds.base`.
pub fn wtawp_loss_and_grad(
    problem: &Problem<'_>,
    params: &ModelParams,
    cfg: &AwpConfig,
    seeds: DropoutSeeds,
) -> Result<WtawpOutput> {
    cfg.validate(params.n_layers())?;
    let (base_loss, base_grads) = problem.loss_and_grad(params, seeds.base)?;
    if cfg.is_vanilla() {
        return Ok(WtawpOutput {
            loss: base_loss,
            grads: base_grads.clone(),
            base_loss,
            perturbed_loss: None,
            base_grads,
        });
    }
    let delta = perturbation_from_grad(problem, params, &base_grads, cfg, seeds.base)?;
    let (perturbed_loss, perturbed_grads) =
        problem.loss_and_grad(&params.offset(&delta, 1.0), seeds.perturbed)?;
    let lambda = cfg.lambda;
    let mut grads = perturbed_grads.scale(lambda);
    grads.add_scaled(&base_grads, 1.0 - lambda);
    Ok(WtawpOutput {
        loss: lambda * perturbed_loss + (1.0 - lambda) * base_loss,
        grads,
        base_loss,
        perturbed_loss: Some(perturbed_loss),
        base_grads,
    })
}

/// `θ ↦ L(θ + δ̂*(θ))` in evaluation mode.
pub fn composite_loss(problem: &Problem<'_>, params: &ModelParams, cfg: &AwpConfig) -> Result<f64> {
    let delta = compute_perturbation(problem, params, cfg, None)?;
    problem.loss_at(&params.offset(&delta, 1.0), None)
}

/// Composite `f(θ + Π(∇f(θ)))` for an arbitrary differentiable function on
/// flat vectors; `radius = None` disables the projection.
pub fn composite_value<F, G>(theta: &[f64], f: F, grad: G, radius: Option<f64>) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut step = grad(theta);
    if let Some(r) = radius {
        let norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > r {
            step.iter_mut().for_each(|v| *v *= r / norm);
        }
    }
    let moved: Vec<f64> = theta.iter().zip(&step).map(|(a, b)| a + b).collect();
    f(&moved)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientGap {
    pub exact_grad: GradientSet,
    pub approx_grad: GradientSet,
    pub gap_norm: f64,
}

/// Default cap on weight entries for [`exact_vs_approx_gradient_gap`].
pub const GAP_ENTRY_CAP: usize = 5_000;

/// Compares the exact gradient of `θ ↦ L(θ + δ̂*(θ))` (central differences,
/// so the `∇δ̂*` term is included) with the first-order approximation
/// `∇L` evaluated at `θ + δ̂*`. Dropout is disabled.
pub fn exact_vs_approx_gradient_gap(
    problem: &Problem<'_>,
    params: &ModelParams,
    cfg: &AwpConfig,
    probe_eps: f64,
    entry_cap: usize,
    exec: Execution,
) -> Result<GradientGap> {
    let entries = params.n_entries();
    if entries > entry_cap {
        return Err(CoreError::TooLarge {
            entries,
            cap: entry_cap,
        });
    }
    let delta = compute_perturbation(problem, params, cfg, None)?;
    let (_, approx_grad) = problem.loss_and_grad(&params.offset(&delta, 1.0), None)?;
    let exact_grad = fd_gradient(params, probe_eps, exec, |p| composite_loss(problem, p, cfg))?;
    let mut diff = exact_grad.clone();
    diff.add_scaled(&approx_grad, -1.0);
    Ok(GradientGap {
        gap_norm: diff.norm(),
        exact_grad,
        approx_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::SmallInstance;
    use crate::nn::ModelKind;

    fn set(rows: &[&[f64]]) -> GradientSet {
        GradientSet {
            layers: rows
                .iter()
                .map(|r| DenseMatrix::from_vec(1, r.len(), r.to_vec()).unwrap())
                .collect(),
        }
    }

    #[test]
    fn projection_examples() {
        let d = set(&[&[3.0, 4.0]]);
        let p = project_to_ball(&d, &[1.0]);
        assert!((p.layers[0].data[0] - 0.6).abs() < 1e-15);
        assert!((p.layers[0].data[1] - 0.8).abs() < 1e-15);
        assert_eq!(project_to_ball(&d, &[5.0]), d);
        assert_eq!(project_to_ball(&d, &[6.0]), d);
        assert!(project_to_ball(&d, &[0.0]).is_zero());
    }

    #[test]
    fn sphere_scaling() {
        let d = set(&[&[3.0, 4.0], &[0.0, 0.0]]);
        let p = scale_to_sphere(&d, &[10.0, 1.0]);
        assert!((p.layers[0].frobenius_norm() - 10.0).abs() < 1e-12);
        assert!(p.layers[1].data.iter().all(|&v| v == 0.0));
        assert!(scale_to_sphere(&d, &[0.0, 0.0]).is_zero());
    }

    #[test]
    fn radii_examples() {
        let mut p = ModelParams::new(
            vec![DenseMatrix::identity(2).scale(3.0), DenseMatrix::zeros(2, 2)],
            vec![true, true],
        )
        .unwrap();
        let r1 = layer_radii(&p, 1.0);
        assert!((r1[0] - 3.0 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r1[1], 0.0);
        let r2 = layer_radii(&p, 2.0);
        assert_eq!(r2[0], 2.0 * r1[0]);
        p.awp_mask = vec![false, true];
        assert_eq!(layer_radii(&p, 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn truncated_layers_are_exactly_zero() {
        let inst = SmallInstance::random(ModelKind::Gcn2, 3).unwrap();
        let cfg = AwpConfig::first_layer(0.5, 1.0, 2);
        let d = compute_perturbation(&inst.problem(), &inst.params, &cfg, None).unwrap();
        assert!(d.layers[1].data.iter().all(|&v| v == 0.0 && v.is_sign_positive()));
        assert!(!d.layers[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_equals_projected_gradient() {
        let inst = SmallInstance::random(ModelKind::Gcn2, 8).unwrap();
        let problem = inst.problem();
        let cfg = AwpConfig::all_layers(0.05, 1.0, 2);
        let d = compute_perturbation(&problem, &inst.params, &cfg, None).unwrap();
        let (_, g) = problem.loss_and_grad(&inst.params, None).unwrap();
        let radii: Vec<f64> = inst.params.layers.iter().map(|w| 0.05 * w.frobenius_norm()).collect();
        for ((dl, gl), r) in d.layers.iter().zip(&g.layers).zip(&radii) {
            let gn = gl.frobenius_norm();
            let expect = if gn > *r { gl.scale(r / gn) } else { gl.clone() };
            assert!(dl.max_abs_diff(&expect) < 1e-15);
        }
    }

    #[test]
    fn multi_step_stays_in_ball() {
        let inst = SmallInstance::random(ModelKind::Ppnp, 2).unwrap();
        for rho in [0.01, 0.5, 3.0] {
            let cfg = AwpConfig::all_layers(rho, 1.0, 2).with_pgd(5, 0.2);
            let d = compute_perturbation(&inst.problem(), &inst.params, &cfg, None).unwrap();
            for (dl, r) in d.layers.iter().zip(layer_radii_masked(&inst.params, rho, &cfg.perturb_layers)) {
                assert!(dl.frobenius_norm() <= r * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn degenerate_mixing_is_vanilla() {
        let mut inst = SmallInstance::random(ModelKind::Gcn2, 4).unwrap();
        inst.spec.dropout_rate = 0.5;
        let problem = inst.problem();
        let seeds = DropoutSeeds {
            base: Some(1),
            perturbed: Some(2),
        };
        let (l, g) = problem.loss_and_grad(&inst.params, Some(1)).unwrap();
        for cfg in [AwpConfig::first_layer(1.0, 0.0, 2), AwpConfig::all_layers(0.0, 0.6, 2)] {
            let out = wtawp_loss_and_grad(&problem, &inst.params, &cfg, seeds).unwrap();
            assert_eq!(out.loss, l);
            assert_eq!(out.grads, g);
        }
    }

    #[test]
    fn half_mixing_recomposes() {
        let inst = SmallInstance::random(ModelKind::Gcn2, 6).unwrap();
        let problem = inst.problem();
        let cfg = AwpConfig::first_layer(0.8, 0.5, 2);
        let out = wtawp_loss_and_grad(&problem, &inst.params, &cfg, DropoutSeeds::default()).unwrap();
        // Out-of-line: recompute the gradient, project, evaluate both terms.
        let (_, g) = problem.loss_and_grad(&inst.params, None).unwrap();
        let r = 0.8 * inst.params.layers[0].frobenius_norm();
        let gn = g.layers[0].frobenius_norm();
        let mut moved = inst.params.clone();
        moved.layers[0].add_scaled(&g.layers[0], if gn > r { r / gn } else { 1.0 });
        let expect = 0.5 * (problem.loss_at(&moved, None).unwrap() + problem.loss_at(&inst.params, None).unwrap());
        assert!((out.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_gives_zero_perturbation() {
        let inst = SmallInstance::random(ModelKind::Gcn2, 1).unwrap();
        let mut params = inst.params.clone();
        params.layers.iter_mut().for_each(|w| w.scale_in_place(0.0));
        // All-zero weights: relu'(0) = 0 and the output layer sees zero input.
        let d = compute_perturbation(&inst.problem(), &params, &AwpConfig::all_layers(2.0, 1.0, 2), None).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn gap_is_zero_without_perturbation() {
        let inst = SmallInstance::random(ModelKind::Gcn2, 5).unwrap();
        let cfg = AwpConfig::all_layers(0.0, 1.0, 2);
        let gap = exact_vs_approx_gradient_gap(&inst.problem(), &inst.params, &cfg, 1e-5, GAP_ENTRY_CAP, Execution::Sequential).unwrap();
        assert!(gap.gap_norm <= 1e-6, "{}", gap.gap_norm);
        let err = exact_vs_approx_gradient_gap(&inst.problem(), &inst.params, &cfg, 1e-5, 3, Execution::Sequential);
        assert!(matches!(err, Err(CoreError::TooLarge { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(AwpConfig::first_layer(1.0, 1.5, 2).validate(2).is_err());
        assert!(AwpConfig::first_layer(-1.0, 0.5, 2).validate(2).is_err());
        assert!(AwpConfig::first_layer(1.0, 0.5, 2).with_pgd(0, 0.1).validate(2).is_err());
        assert!(AwpConfig::first_layer(1.0, 0.5, 2).validate(3).is_err());
    }
}
