use std::fmt::Write as _;

use serde::Serialize;

use wtawp_core::analysis::{input_gradient_smoothness, mean, welch_t_test, SmoothnessConfig};
use wtawp_core::exec::map_indexed;
use wtawp_core::nn::Problem;
use wtawp_core::{CoreError, Execution};

use super::Context;
use crate::output::{write_json, write_text};
use crate::runs::{cells, Prepared};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
struct Pair {
    baseline_acc: f64,
    variant_acc: f64,
    baseline_grad_norm: f64,
    variant_grad_norm: f64,
}

#[derive(Debug, Serialize)]
struct PairedSummary {
    n_pairs: usize,
    mean_delta: f64,
    variant_more_accurate: usize,
    variant_smoother: usize,
    t: Option<f64>,
    df: Option<f64>,
    p_value: Option<f64>,
    /// Set when the test is undefined, e.g. all deltas equal.
    degenerate: Option<String>,
}

/// Paired t-test on `deltas`, computed as Welch's test against a zero
/// sample (its degrees of freedom reduce to n − 1). Returns
/// `(t, df, p)`, or the reason the test is undefined.
pub fn paired_p_value(deltas: &[f64]) -> Result<(f64, f64, f64), String> {
    let zeros = vec![0.0; deltas.len()];
    match welch_t_test(deltas, &zeros) {
        Ok(w) => Ok((w.t, w.df, w.p_two_sided)),
        Err(CoreError::Degenerate(msg)) => Err(msg),
        Err(e) => Err(e.to_string()),
    }
}

/// Trains the baseline and the variant on identical seeds for every
/// (split, init) cell and compares accuracy and input-gradient norms.
pub fn paired(ctx: &Context) -> Result<(), CliError> {
    let prep = Prepared::new(&ctx.cfg)?;
    let variant = prep
        .awp(ctx.cfg.awp.as_ref())?
        .ok_or_else(|| CliError::Usage("paired needs an `awp` section for the variant".into()))?;
    let baseline = prep.awp(ctx.cfg.paired.baseline_awp.as_ref())?;
    let seeds = cells(&ctx.cfg);
    let pairs = map_indexed(ctx.exec, seeds.len(), |k| -> Result<Pair, CliError> {
        let cell = &seeds[k];
        let (split, pb, rb) = prep.train_cell(cell, baseline.as_ref())?;
        let (_, pv, rv) = prep.train_cell(cell, Some(&variant))?;
        let problem = Problem::new(&prep.spec, &prep.adj, &prep.graph.features, &prep.graph.labels, &split.train_ids);
        // Both arms see the same noise draws.
        let sc = SmoothnessConfig {
            seed: ctx.cfg.paired.smoothness.seed + k as u64,
            ..ctx.cfg.paired.smoothness.clone()
        };
        let nb = input_gradient_smoothness(&problem, &pb, &sc, Execution::Sequential)?;
        let nv = input_gradient_smoothness(&problem, &pv, &sc, Execution::Sequential)?;
        Ok(Pair {
            baseline_acc: rb.test_acc,
            variant_acc: rv.test_acc,
            baseline_grad_norm: nb.mean_grad_norm,
            variant_grad_norm: nv.mean_grad_norm,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from(
        "split_index,split_seed,init_index,init_seed,baseline_acc,variant_acc,delta,baseline_grad_norm,variant_grad_norm,variant_smoother\n",
    );
    for (c, p) in seeds.iter().zip(&pairs) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            c.split_index,
            c.split_seed,
            c.init_index,
            c.init_seed,
            p.baseline_acc,
            p.variant_acc,
            p.variant_acc - p.baseline_acc,
            p.baseline_grad_norm,
            p.variant_grad_norm,
            p.variant_grad_norm < p.baseline_grad_norm
        );
    }
    write_text(&ctx.path("paired.csv"), &csv)?;

    let deltas: Vec<f64> = pairs.iter().map(|p| p.variant_acc - p.baseline_acc).collect();
    let mean_delta = mean(&deltas);
    let test = paired_p_value(&deltas);
    let summary = PairedSummary {
        n_pairs: pairs.len(),
        mean_delta,
        variant_more_accurate: deltas.iter().filter(|d| **d > 0.0).count(),
        variant_smoother: pairs.iter().filter(|p| p.variant_grad_norm < p.baseline_grad_norm).count(),
        t: test.as_ref().ok().map(|r| r.0),
        df: test.as_ref().ok().map(|r| r.1),
        p_value: match &test {
            Ok(r) => Some(r.2),
            Err(_) if mean_delta == 0.0 => Some(1.0),
            Err(_) => None,
        },
        degenerate: test.as_ref().err().cloned(),
    };

    let mut stats = String::from("n_pairs,mean_delta,t,df,p_value,note\n");
    let _ = writeln!(
        stats,
        "{},{},{},{},{},{}",
        summary.n_pairs,
        summary.mean_delta,
        crate::output::opt_field(summary.t),
        crate::output::opt_field(summary.df),
        crate::output::opt_field(summary.p_value),
        summary.degenerate.as_deref().unwrap_or("")
    );
    write_text(&ctx.path("paired_stats.csv"), &stats)?;
    write_json(&ctx.path("summary.json"), &summary)
}
