use std::fmt::Write as _;

use serde::Serialize;

use wtawp_core::analysis::{
    bound_terms, generalization_gap, input_gradient_smoothness, landscape_slice, smoothness_csv, BoundConfig,
    BoundReport, SharpnessConfig, SmoothnessRow,
};
use wtawp_core::awp::{exact_vs_approx_gradient_gap, AwpConfig};
use wtawp_core::exec::map_indexed;
use wtawp_core::gradcheck::{check_model, SmallInstance};
use wtawp_core::nn::{ModelParams, Problem};

use super::Context;
use crate::output::{opt_field, read_text, write_json, write_text};
use crate::runs::{cells, Cell, Prepared};
use crate::{CliError, Diagnostic};

/// Relative-error threshold reported by the gradient check.
pub const GRADCHECK_TOL: f64 = 1e-5;

pub fn diagnose(ctx: &Context, which: Diagnostic) -> Result<(), CliError> {
    match which {
        Diagnostic::Gradcheck => gradcheck(ctx),
        Diagnostic::Gapscale => gapscale(ctx),
        _ => trained(ctx, which),
    }
}

#[derive(Debug, Serialize)]
struct TrainedSummary<T: Serialize> {
    cell: Cell,
    params_source: String,
    /// Evaluation-mode loss on the training nodes.
    train_loss: f64,
    #[serde(flatten)]
    detail: T,
}

/// Diagnostics that need parameters: loaded from `diagnose.params`, or
/// trained inline on the first (split, init) cell.
fn trained(ctx: &Context, which: Diagnostic) -> Result<(), CliError> {
    let prep = Prepared::new(&ctx.cfg)?;
    let cell = cells(&ctx.cfg)[0];
    let split = prep.split(&cell);
    let (params, source) = match &ctx.cfg.diagnose.params {
        Some(path) => {
            let text = read_text(path)?;
            let p: ModelParams = serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: path.clone(),
                message: e.to_string(),
            })?;
            prep.spec.check_params(&p).map_err(|e| CliError::Config {
                path: path.clone(),
                message: e.to_string(),
            })?;
            (p, path.display().to_string())
        }
        None => {
            let awp = prep.awp(ctx.cfg.awp.as_ref())?;
            let (_, p, _) = prep.train_cell(&cell, awp.as_ref())?;
            (p, format!("trained inline on {}", cell.id()))
        }
    };
    let problem = Problem::new(&prep.spec, &prep.adj, &prep.graph.features, &prep.graph.labels, &split.train_ids);
    let train_loss = problem.loss_at(&params, None)?;
    let d = &ctx.cfg.diagnose;
    let summary_path = ctx.path(&format!("{}_summary.json", which.name()));
    let summary = |detail| TrainedSummary {
        cell,
        params_source: source.clone(),
        train_loss,
        detail,
    };

    match which {
        Diagnostic::Landscape => {
            let r = landscape_slice(&problem, &params, &d.landscape, ctx.exec)?;
            write_text(&ctx.path("landscape.csv"), &r.to_csv())?;
            write_json(&summary_path, &summary(serde_json::json!({ "base_loss": r.base_loss })))
        }
        Diagnostic::Smoothness => {
            let r = input_gradient_smoothness(&problem, &params, &d.smoothness, ctx.exec)?;
            let row = SmoothnessRow {
                model_id: cell.id(),
                target: r.target,
                mean_grad_norm: r.mean_grad_norm,
            };
            write_text(&ctx.path("smoothness.csv"), &smoothness_csv(&[row]))?;
            write_json(&summary_path, &summary(serde_json::json!({ "mean_grad_norm": r.mean_grad_norm })))
        }
        Diagnostic::Bound => {
            let n_params = params.n_entries();
            let m = d.bound.m.unwrap_or((n_params as f64).sqrt());
            let mut csv = String::from(BoundReport::csv_header());
            for &rho in &d.bound.rhos {
                let bc = BoundConfig {
                    m,
                    confidence_delta: d.bound.confidence_delta,
                    rho,
                    sharpness_samples: d.bound.sharpness_samples,
                    seed: ctx.cfg.seed,
                };
                csv.push_str(&bound_terms(&problem, &params, &bc, ctx.exec)?.csv_row());
            }
            write_text(&ctx.path("bound.csv"), &csv)?;
            let all = split.all_ids();
            let sharp = SharpnessConfig::per_layer(d.bound.rhos.first().copied().unwrap_or(0.0));
            let gap = generalization_gap(&problem, &params, &all, &sharp, ctx.exec)?;
            write_json(&summary_path, &summary(serde_json::json!({ "m": m, "d": n_params, "gap": gap })))
        }
        Diagnostic::Gradcheck | Diagnostic::Gapscale => unreachable!("handled without training"),
    }
}

#[derive(Debug, Serialize)]
struct GradcheckSummary {
    rows: usize,
    max_rel_err: f64,
    tolerance: f64,
    pass: bool,
}

fn gradcheck(ctx: &Context) -> Result<(), CliError> {
    let g = &ctx.cfg.diagnose.gradcheck;
    let jobs: Vec<_> = g
        .models
        .iter()
        .flat_map(|&m| (0..g.instances).map(move |s| (m, s)))
        .collect();
    let rows = map_indexed(ctx.exec, jobs.len(), |k| check_model(jobs[k].0, jobs[k].1, None))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("model,seed,entries,max_rel_err,max_abs_err,pass\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.model.name(),
            r.seed,
            r.entries,
            r.max_rel_err,
            r.max_abs_err,
            r.max_rel_err < GRADCHECK_TOL
        );
    }
    write_text(&ctx.path("gradcheck.csv"), &csv)?;
    let max = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    write_json(
        &ctx.path("gradcheck_summary.json"),
        &GradcheckSummary {
            rows: rows.len(),
            max_rel_err: max,
            tolerance: GRADCHECK_TOL,
            pass: max < GRADCHECK_TOL,
        },
    )
}

/// `gap_norm(ρ)` on a fixed small instance, with the ratio to `gap_norm(ρ/2)`
/// whenever `ρ/2` is also probed.
fn gapscale(ctx: &Context) -> Result<(), CliError> {
    let g = &ctx.cfg.diagnose.gapscale;
    let inst = SmallInstance::random(g.model, g.instance_seed)?;
    let problem = inst.problem();
    let n_layers = inst.params.n_layers();
    let awp_for = |rho: f64| -> AwpConfig {
        match &ctx.cfg.awp {
            Some(s) => AwpConfig {
                rho,
                ..s.to_config(n_layers)
            },
            None => AwpConfig::all_layers(rho, 1.0, n_layers),
        }
    };
    let mut gaps = Vec::with_capacity(g.rhos.len());
    for &rho in &g.rhos {
        let gap = exact_vs_approx_gradient_gap(&problem, &inst.params, &awp_for(rho), g.probe_eps, g.max_entries, ctx.exec)?;
        gaps.push((rho, gap.gap_norm));
    }
    let mut csv = String::from("rho,gap_norm,ratio_to_half\n");
    for &(rho, gap) in &gaps {
        let ratio = gaps
            .iter()
            .find(|(r, _)| rho > 0.0 && *r == rho / 2.0)
            .filter(|(_, half)| *half > 0.0)
            .map(|(_, half)| gap / half);
        let _ = writeln!(csv, "{rho},{gap},{}", opt_field(ratio));
    }
    write_text(&ctx.path("gapscale.csv"), &csv)?;
    write_json(&ctx.path("gapscale_summary.json"), &serde_json::json!({ "entries": inst.params.n_entries(), "gaps": gaps }))
}
