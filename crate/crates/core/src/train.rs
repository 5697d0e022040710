//! Full-batch training with optional WT-AWP and validation-based model
//! selection.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::awp::{wtawp_loss_and_grad, AwpConfig, DropoutSeeds};
use crate::error::{CoreError, Result};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency, Split};
use crate::nn::{softmax_cross_entropy, accuracy, AdamState, ModelKind, ModelParams, ModelSpec, Problem};
use crate::seed::{self, Stream};

/// Which epoch's parameters `train` returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest validation accuracy; ties go to lower validation loss, then
    /// the earlier epoch.
    #[default]
    BestVal,
    /// The parameters after the last epoch.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            weight_decay: 5e-4,
            hidden_dim: 64,
            dropout: 0.5,
            seed: 0,
            selection: Selection::BestVal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(CoreError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::InvalidConfig(format!("lr {} must be > 0", self.lr)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(CoreError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Model dimensions for `graph` using this config's hidden size and
    /// dropout rate.
    pub fn model_spec(&self, kind: ModelKind, graph: &Graph) -> ModelSpec {
        ModelSpec::new(kind, graph.n_features(), self.hidden_dim, graph.n_classes).with_dropout(self.dropout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Perturbed-term loss; absent for vanilla steps.
    pub awp_loss: Option<f64>,
    pub rel_grad_norm: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy of the returned parameters.
    pub test_acc: f64,
    /// Test accuracy of the best-validation epoch.
    pub best_val_test_acc: f64,
    /// Test accuracy of the parameters after the last epoch.
    pub final_test_acc: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub best_val_test_acc: f64,
    pub final_test_acc: f64,
    pub final_train_loss: f64,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// One row per epoch. Wall-clock time is left out so the file depends
    /// only on the inputs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,awp_loss,rel_grad_norm,val_acc\n");
        for r in &self.epochs {
            let awp = r.awp_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, awp, r.rel_grad_norm, r.val_acc);
        }
        out
    }

    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            epochs: self.epochs.len(),
            best_epoch: self.best_epoch,
            best_val_acc: self.best_val_acc,
            test_acc: self.test_acc,
            best_val_test_acc: self.best_val_test_acc,
            final_test_acc: self.final_test_acc,
            final_train_loss: self.epochs.last().map_or(f64::NAN, |r| r.train_loss),
            wall_clock_secs: self.wall_clock_secs,
        }
    }

    /// Same report with timing zeroed, for bitwise comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Trains on `graph` and returns the parameters chosen by `cfg.selection`.
pub fn train(
    spec: &ModelSpec,
    graph: &Graph,
    split: &Split,
    cfg: &TrainConfig,
    awp: Option<&AwpConfig>,
) -> Result<(ModelParams, TrainReport)> {
    let adj = normalize_adjacency(graph);
    train_with_adjacency(spec, graph, &adj, split, cfg, awp)
}

pub fn train_with_adjacency(
    spec: &ModelSpec,
    graph: &Graph,
    adj: &NormalizedAdjacency,
    split: &Split,
    cfg: &TrainConfig,
    awp: Option<&AwpConfig>,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    spec.validate()?;
    if spec.input_dim != graph.n_features() || spec.output_dim != graph.n_classes {
        return Err(CoreError::Shape(format!(
            "model expects {} features / {} classes, graph has {} / {}",
            spec.input_dim,
            spec.output_dim,
            graph.n_features(),
            graph.n_classes
        )));
    }
    if split.train_ids.is_empty() || split.val_ids.is_empty() || split.test_ids.is_empty() {
        return Err(CoreError::EmptyNodeSet);
    }
    let start = Instant::now();
    let mut params = spec.init_params(cfg.seed);
    if let Some(a) = awp {
        a.validate(params.n_layers())?;
        params.awp_mask = a.perturb_layers.clone();
    }
    let problem = Problem::new(spec, adj, &graph.features, &graph.labels, &split.train_ids);
    let mut adam = AdamState::new();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let seeds = if spec.dropout_rate > 0.0 {
            DropoutSeeds {
                base: Some(seed::derive(cfg.seed, Stream::Dropout, 2 * epoch as u64)),
                perturbed: Some(seed::derive(cfg.seed, Stream::Dropout, 2 * epoch as u64 + 1)),
            }
        } else {
            DropoutSeeds::default()
        };
        let (train_loss, awp_loss, grads) = match awp {
            Some(a) => {
                let out = wtawp_loss_and_grad(&problem, &params, a, seeds)?;
                (out.base_loss, out.perturbed_loss, out.grads)
            }
            None => {
                let (l, g) = problem.loss_and_grad(&params, seeds.base)?;
                (l, None, g)
            }
        };
        if !train_loss.is_finite() || awp_loss.is_some_and(|l| !l.is_finite()) {
            return Err(CoreError::NonFiniteLoss { epoch });
        }
        let theta_norm = params.norm();
        let rel_grad_norm = if theta_norm > 0.0 { grads.norm() / theta_norm } else { grads.norm() };
        adam.step(&mut params, &grads, cfg.lr, cfg.weight_decay);
        if !params.is_finite() {
            return Err(CoreError::NonFiniteLoss { epoch });
        }

        let logits = problem.logits(&params, None)?;
        let val_acc = accuracy(&logits, &graph.labels, &split.val_ids)?;
        let (val_loss, _) = softmax_cross_entropy(&logits, &graph.labels, &split.val_ids, false)?;
        let better = match &best {
            None => true,
            Some((acc, loss, _, _)) => val_acc > *acc || (val_acc == *acc && val_loss < *loss),
        };
        if better {
            best = Some((val_acc, val_loss, epoch, params.clone()));
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            awp_loss,
            rel_grad_norm,
            val_acc,
        });
    }

    let (best_val_acc, _, best_epoch, best_params) = best.expect("at least one epoch");
    let best_val_test_acc = problem.accuracy(&best_params, &split.test_ids)?;
    let final_test_acc = problem.accuracy(&params, &split.test_ids)?;
    let (chosen, test_acc) = match cfg.selection {
        Selection::BestVal => (best_params, best_val_test_acc),
        Selection::Final => (params, final_test_acc),
    };
    Ok((
        chosen,
        TrainReport {
            epochs: records,
            best_epoch,
            best_val_acc,
            test_acc,
            best_val_test_acc,
            final_test_acc,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    ))
}
