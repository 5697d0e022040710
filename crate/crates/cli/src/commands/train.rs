use std::fmt::Write as _;

use serde::Serialize;

use wtawp_core::analysis::mean_std;
use wtawp_core::exec::map_indexed;
use wtawp_core::train::TrainSummary;

use super::Context;
use crate::output::{write_json, write_text};
use crate::runs::{cells, Cell, Prepared};
use crate::CliError;

#[derive(Debug, Serialize)]
struct RunEntry {
    #[serde(flatten)]
    cell: Cell,
    #[serde(flatten)]
    summary: TrainSummary,
}

#[derive(Debug, Serialize)]
struct TrainOutput {
    n_runs: usize,
    /// Mean test accuracy over all runs.
    test_acc: f64,
    test_acc_std: f64,
    runs: Vec<RunEntry>,
}

/// Trains every (split, init) cell; writes `runs.csv`, per-run epoch logs and
/// parameters, and `summary.json`.
pub fn train(ctx: &Context) -> Result<(), CliError> {
    let prep = Prepared::new(&ctx.cfg)?;
    let awp = prep.awp(ctx.cfg.awp.as_ref())?;
    let cells = cells(&ctx.cfg);
    let results = map_indexed(ctx.exec, cells.len(), |k| prep.train_cell(&cells[k], awp.as_ref()));

    let mut csv = String::from(
        "split_index,split_seed,init_index,init_seed,best_epoch,best_val_acc,test_acc,best_val_test_acc,final_test_acc,final_train_loss\n",
    );
    let mut runs = Vec::with_capacity(cells.len());
    for (cell, result) in cells.iter().zip(results) {
        let (_, params, report) = result?;
        let dir = ctx.path("runs").join(cell.id());
        write_text(&dir.join("train.csv"), &report.to_csv())?;
        write_json(&dir.join("params.json"), &params)?;
        let s = report.summary();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            cell.split_index,
            cell.split_seed,
            cell.init_index,
            cell.init_seed,
            s.best_epoch,
            s.best_val_acc,
            s.test_acc,
            s.best_val_test_acc,
            s.final_test_acc,
            s.final_train_loss
        );
        runs.push(RunEntry { cell: *cell, summary: s });
    }
    write_text(&ctx.path("runs.csv"), &csv)?;

    let accs: Vec<f64> = runs.iter().map(|r| r.summary.test_acc).collect();
    let (m, s) = mean_std(&accs);
    write_json(
        &ctx.path("summary.json"),
        &TrainOutput {
            n_runs: runs.len(),
            test_acc: m,
            test_acc_std: s,
            runs,
        },
    )
}
