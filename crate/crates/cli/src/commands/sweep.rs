use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wtawp_core::analysis::{mean_std, welch_t_test};
use wtawp_core::awp::{AwpConfig, Projection};
use wtawp_core::exec::map_indexed;

use super::Context;
use crate::config::{AwpSection, LayerSelection, NamedLayers};
use crate::output::{opt_field, read_text, write_json, write_text};
use crate::runs::{cells, Cell, Prepared};
use crate::CliError;

/// One (λ, ρ, split, init) run, stored as `cells/<hash>/cell.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub lambda: f64,
    pub rho: f64,
    #[serde(flatten)]
    pub cell: Cell,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Aggregate {
    lambda: f64,
    rho: f64,
    n_ok: usize,
    n_failed: usize,
    mean: f64,
    std: f64,
    welch_t: Option<f64>,
    welch_df: Option<f64>,
    welch_p: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    baseline: [f64; 2],
    n_cells: usize,
    n_failed: usize,
    total_wall_clock_secs: f64,
    aggregates: Vec<Aggregate>,
}

const CELLS_HEADER: &str = "lambda,rho,split_index,split_seed,init_index,init_seed,status,test_acc\n";
const AGG_HEADER: &str = "lambda,rho,n_ok,n_failed,mean,std,welch_t,welch_df,welch_p\n";

fn cell_hash(config_hash: &str, lambda: f64, rho: f64, cell: &Cell) -> String {
    let key = format!("{config_hash}|{lambda:?}|{rho:?}|{}|{}", cell.split_seed, cell.init_seed);
    hex::encode(Sha256::digest(key.as_bytes()))[..16].to_string()
}

fn load_cell(path: &Path) -> Option<CellRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Runs the λ × ρ grid over every (split, init) cell. Finished cells found
/// on disk are reused.
pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let grid = ctx
        .cfg
        .grid
        .clone()
        .ok_or_else(|| CliError::Usage("sweep needs a `grid` section".into()))?;
    let prep = Prepared::new(&ctx.cfg)?;
    let base = ctx.cfg.awp.clone().unwrap_or(AwpSection {
        rho: 0.0,
        lambda: 0.0,
        pgd_steps: 1,
        pgd_lr: 0.2,
        layers: LayerSelection::Named(NamedLayers::First),
        projection: Projection::Ball,
    });

    let mut points: Vec<(f64, f64, AwpConfig)> = Vec::new();
    for &lambda in &grid.lambdas {
        for &rho in &grid.rhos {
            let section = AwpSection {
                lambda,
                rho,
                ..base.clone()
            };
            let awp = prep.awp(Some(&section))?.expect("section given");
            points.push((lambda, rho, awp));
        }
    }
    let baseline = grid.baseline.unwrap_or([grid.lambdas[0], grid.rhos[0]]);
    if !points.iter().any(|(l, r, _)| *l == baseline[0] && *r == baseline[1]) {
        return Err(CliError::Usage(format!("baseline {baseline:?} is not a grid cell")));
    }

    let seeds = cells(&ctx.cfg);
    let hash = ctx.cfg.content_hash();
    let tasks: Vec<(usize, Cell)> = (0..points.len())
        .flat_map(|p| seeds.iter().map(move |c| (p, *c)))
        .collect();
    let records = map_indexed(ctx.exec, tasks.len(), |k| -> Result<CellRecord, CliError> {
        let (p, cell) = tasks[k];
        let (lambda, rho, awp) = &points[p];
        let path = ctx
            .path("cells")
            .join(cell_hash(&hash, *lambda, *rho, &cell))
            .join("cell.json");
        if let Some(done) = load_cell(&path) {
            return Ok(done);
        }
        let start = Instant::now();
        let (test_acc, error) = match prep.train_cell(&cell, Some(awp)) {
            Ok((_, _, report)) => (Some(report.test_acc), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let record = CellRecord {
            lambda: *lambda,
            rho: *rho,
            cell,
            test_acc,
            error,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        };
        write_json(&path, &record)?;
        Ok(record)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut raw = String::from(CELLS_HEADER);
    for r in &records {
        let status = if r.test_acc.is_some() { "ok" } else { "failed" };
        let _ = writeln!(
            raw,
            "{},{},{},{},{},{},{},{}",
            r.lambda,
            r.rho,
            r.cell.split_index,
            r.cell.split_seed,
            r.cell.init_index,
            r.cell.init_seed,
            status,
            opt_field(r.test_acc)
        );
    }
    write_text(&ctx.path("cells.csv"), &raw)?;

    let per_point = |lambda: f64, rho: f64| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.lambda == lambda && r.rho == rho)
            .filter_map(|r| r.test_acc)
            .collect()
    };
    let base_accs = per_point(baseline[0], baseline[1]);
    let aggregates: Vec<Aggregate> = points
        .iter()
        .map(|(lambda, rho, _)| {
            let accs = per_point(*lambda, *rho);
            let (mean, std) = if accs.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&accs) };
            let welch = welch_t_test(&accs, &base_accs).ok();
            Aggregate {
                lambda: *lambda,
                rho: *rho,
                n_ok: accs.len(),
                n_failed: seeds.len() - accs.len(),
                mean,
                std,
                welch_t: welch.map(|w| w.t),
                welch_df: welch.map(|w| w.df),
                welch_p: welch.map(|w| w.p_two_sided),
            }
        })
        .collect();

    let mut agg = String::from(AGG_HEADER);
    for a in &aggregates {
        let _ = writeln!(
            agg,
            "{},{},{},{},{},{},{},{},{}",
            a.lambda,
            a.rho,
            a.n_ok,
            a.n_failed,
            a.mean,
            a.std,
            opt_field(a.welch_t),
            opt_field(a.welch_df),
            opt_field(a.welch_p)
        );
    }
    write_text(&ctx.path("aggregates.csv"), &agg)?;

    // Rows λ, columns ρ, accuracy in percent.
    let mut table = String::from("lambda");
    for rho in &grid.rhos {
        let _ = write!(table, ",rho={rho}");
    }
    table.push('\n');
    for &lambda in &grid.lambdas {
        let _ = write!(table, "{lambda}");
        for &rho in &grid.rhos {
            let a = aggregates
                .iter()
                .find(|a| a.lambda == lambda && a.rho == rho)
                .expect("every grid point aggregated");
            let _ = write!(table, ",{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * a.std);
        }
        table.push('\n');
    }
    write_text(&ctx.path("table.csv"), &table)?;

    verify_sweep(&ctx.dir)?;

    write_json(
        &ctx.path("summary.json"),
        &SweepSummary {
            baseline,
            n_cells: records.len(),
            n_failed: records.iter().filter(|r| r.test_acc.is_none()).count(),
            total_wall_clock_secs: records.iter().map(|r| r.wall_clock_secs).sum(),
            aggregates,
        },
    )
}

fn parse_f64(field: &str, what: &str) -> Result<f64, CliError> {
    field
        .parse()
        .map_err(|_| CliError::Verification(format!("bad {what} field `{field}`")))
}

/// Recomputes every mean and std in `aggregates.csv` from `cells.csv` and
/// checks agreement to 1e-12.
pub fn verify_sweep(dir: &Path) -> Result<(), CliError> {
    let raw = read_text(&dir.join("cells.csv"))?;
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for line in raw.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(CliError::Verification(format!("cells.csv row `{line}`")));
        }
        let entry = groups.entry((f[0].to_string(), f[1].to_string())).or_default();
        if f[6] == "ok" {
            entry.push(parse_f64(f[7], "test_acc")?);
        }
    }
    let agg = read_text(&dir.join("aggregates.csv"))?;
    let mut seen = 0;
    for line in agg.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(CliError::Verification(format!("aggregates.csv row `{line}`")));
        }
        let accs = groups
            .get(&(f[0].to_string(), f[1].to_string()))
            .ok_or_else(|| CliError::Verification(format!("no cells for lambda={} rho={}", f[0], f[1])))?;
        seen += 1;
        if accs.is_empty() {
            continue;
        }
        let (m, s) = mean_std(accs);
        let (want_m, want_s) = (parse_f64(f[4], "mean")?, parse_f64(f[5], "std")?);
        if (m - want_m).abs() > 1e-12 || (s - want_s).abs() > 1e-12 {
            return Err(CliError::Verification(format!(
                "lambda={} rho={}: recomputed {m} ± {s}, stored {want_m} ± {want_s}",
                f[0], f[1]
            )));
        }
    }
    if seen != groups.len() {
        return Err(CliError::Verification("aggregate and cell groups differ".into()));
    }
    Ok(())
}
