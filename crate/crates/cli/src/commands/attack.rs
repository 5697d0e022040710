use std::fmt::Write as _;

use serde::Serialize;

use wtawp_core::analysis::mean_std;
use wtawp_core::attacks::{attack as perturb, evaluate_evasion, evaluate_poisoning, AttackSpec};
use wtawp_core::awp::AwpConfig;
use wtawp_core::exec::map_indexed;
use wtawp_core::graph::Graph;

use super::Context;
use crate::config::Protocol;
use crate::output::{opt_field, write_json, write_text};
use crate::runs::{cells, Prepared};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
struct Row {
    arm: &'static str,
    n_flips: usize,
    clean_acc: f64,
    evasion_acc: Option<f64>,
    poisoning_acc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ArmSummary {
    arm: &'static str,
    clean: (f64, f64),
    evasion: Option<(f64, f64)>,
    poisoning: Option<(f64, f64)>,
}

/// For every (split, init) cell, trains each arm on the clean graph and
/// reports clean, evasion and poisoning test accuracy. The attacked graph
/// depends only on the split, so both arms face the same flips.
pub fn attack(ctx: &Context) -> Result<(), CliError> {
    let section = ctx
        .cfg
        .attack
        .clone()
        .ok_or_else(|| CliError::Usage("attack needs an `attack` section".into()))?;
    let prep = Prepared::new(&ctx.cfg)?;
    let mut arms: Vec<(&'static str, Option<AwpConfig>)> = vec![("baseline", prep.awp(ctx.cfg.paired.baseline_awp.as_ref())?)];
    if let Some(v) = prep.awp(ctx.cfg.awp.as_ref())? {
        arms.push(("variant", Some(v)));
    }
    let attacked: Vec<(Graph, usize)> = map_indexed(ctx.exec, ctx.cfg.splits, |s| {
        let spec = AttackSpec {
            kind: section.kind,
            budget_fraction: section.budget_fraction,
            seed: section.seed + s as u64,
        };
        spec.validate()?;
        perturb(&prep.graph, &spec).map(|p| {
            let n = p.n_flips();
            (p.graph, n)
        })
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let seeds = cells(&ctx.cfg);
    let tasks: Vec<(usize, usize)> = (0..arms.len())
        .flat_map(|a| (0..seeds.len()).map(move |c| (a, c)))
        .collect();
    let rows = map_indexed(ctx.exec, tasks.len(), |k| -> Result<Row, CliError> {
        let (a, c) = tasks[k];
        let (arm, awp) = &arms[a];
        let cell = &seeds[c];
        let (hit, n_flips) = (&attacked[cell.split_index].0, attacked[cell.split_index].1);
        let (split, params, report) = prep.train_cell(cell, awp.as_ref())?;
        let evasion_acc = match section.protocol {
            Protocol::Poisoning => None,
            _ => Some(evaluate_evasion(&prep.spec, &params, &prep.graph, hit, &split)?.attacked_acc),
        };
        let poisoning_acc = match section.protocol {
            Protocol::Evasion => None,
            _ => {
                let cfg = wtawp_core::train::TrainConfig {
                    seed: cell.init_seed,
                    ..prep.train.clone()
                };
                Some(evaluate_poisoning(&prep.spec, hit, &split, &cfg, awp.as_ref())?.attacked_acc)
            }
        };
        Ok(Row {
            arm,
            n_flips,
            clean_acc: report.test_acc,
            evasion_acc,
            poisoning_acc,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from("arm,split_index,split_seed,init_index,init_seed,n_flips,clean_acc,evasion_acc,poisoning_acc\n");
    for (&(_, c), r) in tasks.iter().zip(&rows) {
        let cell = &seeds[c];
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.arm,
            cell.split_index,
            cell.split_seed,
            cell.init_index,
            cell.init_seed,
            r.n_flips,
            r.clean_acc,
            opt_field(r.evasion_acc),
            opt_field(r.poisoning_acc)
        );
    }
    write_text(&ctx.path("attack.csv"), &csv)?;

    let stat = |xs: Vec<f64>| if xs.is_empty() { None } else { Some(mean_std(&xs)) };
    let summaries: Vec<ArmSummary> = arms
        .iter()
        .map(|(arm, _)| {
            let mine: Vec<&Row> = rows.iter().filter(|r| r.arm == *arm).collect();
            ArmSummary {
                arm,
                clean: mean_std(&mine.iter().map(|r| r.clean_acc).collect::<Vec<_>>()),
                evasion: stat(mine.iter().filter_map(|r| r.evasion_acc).collect()),
                poisoning: stat(mine.iter().filter_map(|r| r.poisoning_acc).collect()),
            }
        })
        .collect();
    let mut table = String::from("arm,clean_mean,clean_std,evasion_mean,evasion_std,poisoning_mean,poisoning_std\n");
    for s in &summaries {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            s.arm,
            s.clean.0,
            s.clean.1,
            opt_field(s.evasion.map(|v| v.0)),
            opt_field(s.evasion.map(|v| v.1)),
            opt_field(s.poisoning.map(|v| v.0)),
            opt_field(s.poisoning.map(|v| v.1))
        );
    }
    write_text(&ctx.path("attack_summary.csv"), &table)?;
    write_json(&ctx.path("summary.json"), &summaries)
}

