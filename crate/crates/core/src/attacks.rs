//! Structure attacks for robustness evaluation: DICE ("delete internally,
//! connect externally") and uniformly random edge flips.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::awp::AwpConfig;
use crate::error::{CoreError, Result};
use crate::graph::{normalize_adjacency, Graph, Split};
use crate::nn::{ModelParams, ModelSpec, Problem};
use crate::seed::{self, Stream};
use crate::train::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Dice,
    RandomFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub budget_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "budget_fraction {} not in (0, 1)",
                self.budget_fraction
            )));
        }
        Ok(())
    }

    /// `floor(budget_fraction · n_edges)` undirected flips.
    pub fn budget(&self, n_edges: usize) -> usize {
        // The epsilon keeps e.g. 0.29 · 100 from flooring to 28.
        (self.budget_fraction * n_edges as f64 + 1e-9).floor() as usize
    }
}

/// Replayable record of an attack.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipList {
    pub added: Vec<[usize; 2]>,
    pub removed: Vec<[usize; 2]>,
}

impl FlipList {
    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Toggles every listed pair. Applying the same list twice restores the
    /// original graph.
    pub fn apply(&self, graph: &Graph) -> Result<Graph> {
        let mut edges: BTreeSet<(usize, usize)> = graph.edges().into_iter().collect();
        for &[i, j] in self.added.iter().chain(&self.removed) {
            let e = ordered(i, j);
            if !edges.remove(&e) {
                edges.insert(e);
            }
        }
        graph.with_edges(&edges.into_iter().collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedGraph {
    pub graph: Graph,
    pub added_edges: Vec<(usize, usize)>,
    pub removed_edges: Vec<(usize, usize)>,
}

impl PerturbedGraph {
    pub fn n_flips(&self) -> usize {
        self.added_edges.len() + self.removed_edges.len()
    }

    pub fn flip_list(&self) -> FlipList {
        FlipList {
            added: self.added_edges.iter().map(|&(i, j)| [i, j]).collect(),
            removed: self.removed_edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

pub fn attack(graph: &Graph, spec: &AttackSpec) -> Result<PerturbedGraph> {
    match spec.kind {
        AttackKind::Dice => dice_attack(graph, spec),
        AttackKind::RandomFlip => random_flip(graph, spec),
    }
}

/// Draws a uniformly random absent pair whose endpoints satisfy `allowed`,
/// or `None` if there is none. `available` is the exact number of such pairs.
fn sample_absent_pair<F>(
    rng: &mut ChaCha8Rng,
    n: usize,
    edges: &BTreeSet<(usize, usize)>,
    available: usize,
    allowed: F,
) -> Option<(usize, usize)>
where
    F: Fn(usize, usize) -> bool,
{
    if available == 0 {
        return None;
    }
    // Rejection sampling is uniform over the allowed pairs; it falls back
    // to enumeration when they are too sparse to hit quickly.
    for _ in 0..4096 {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && allowed(i, j) && !edges.contains(&ordered(i, j)) {
            return Some(ordered(i, j));
        }
    }
    let k = rng.random_range(0..available);
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| allowed(i, j) && !edges.contains(&(i, j)))
        .nth(k)
}

/// Removes intra-class edges and inserts inter-class edges, choosing the type
/// of each flip by a fair coin. When one pool is empty the other is used.
pub fn dice_attack(graph: &Graph, spec: &AttackSpec) -> Result<PerturbedGraph> {
    spec.validate()?;
    let n = graph.n_nodes();
    let labels = &graph.labels;
    let budget = spec.budget(graph.n_edges());
    let mut rng = seed::rng(spec.seed, Stream::Attack, 0);

    let mut edges: BTreeSet<(usize, usize)> = graph.edges().into_iter().collect();
    let mut intra: Vec<(usize, usize)> = edges.iter().copied().filter(|&(i, j)| labels[i] == labels[j]).collect();
    let mut class_sizes = vec![0usize; graph.n_classes];
    labels.iter().for_each(|&c| class_sizes[c] += 1);
    let same_class_pairs: usize = class_sizes.iter().map(|&s| s * s.saturating_sub(1) / 2).sum();
    let inter_pairs = n * n.saturating_sub(1) / 2 - same_class_pairs;
    let mut inter_present = edges.len() - intra.len();

    let mut added = Vec::new();
    let mut removed = Vec::new();
    for done in 0..budget {
        let can_remove = !intra.is_empty();
        let can_insert = inter_present < inter_pairs;
        let insert = match (can_remove, can_insert) {
            (false, false) => return Err(CoreError::AttackExhausted { done, budget }),
            (true, false) => false,
            (false, true) => true,
            (true, true) => rng.random_bool(0.5),
        };
        if insert {
            let e = sample_absent_pair(&mut rng, n, &edges, inter_pairs - inter_present, |i, j| labels[i] != labels[j])
                .expect("count says an inter-class pair is free");
            edges.insert(e);
            inter_present += 1;
            added.push(e);
        } else {
            let e = intra.swap_remove(rng.random_range(0..intra.len()));
            edges.remove(&e);
            removed.push(e);
        }
    }
    Ok(PerturbedGraph {
        graph: graph.with_edges(&edges.into_iter().collect::<Vec<_>>())?,
        added_edges: added,
        removed_edges: removed,
    })
}

/// Flips `floor(budget_fraction · |E|)` distinct pairs chosen uniformly.
pub fn random_flip(graph: &Graph, spec: &AttackSpec) -> Result<PerturbedGraph> {
    spec.validate()?;
    random_flip_count(graph, spec.budget(graph.n_edges()), spec.seed)
}

/// Flips exactly `count` distinct pairs chosen uniformly over all unordered
/// pairs without self-loops.
pub fn random_flip_count(graph: &Graph, count: usize, seed: u64) -> Result<PerturbedGraph> {
    let n = graph.n_nodes();
    let pairs = n * n.saturating_sub(1) / 2;
    if count > pairs {
        return Err(CoreError::AttackExhausted { done: 0, budget: count });
    }
    let mut rng = seed::rng(seed, Stream::Attack, 1);
    let original: BTreeSet<(usize, usize)> = graph.edges().into_iter().collect();
    let mut chosen = BTreeSet::new();
    let mut added = Vec::new();
    let mut removed = Vec::new();
    while chosen.len() < count {
        let e = if 2 * chosen.len() < pairs {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j || chosen.contains(&ordered(i, j)) {
                continue;
            }
            ordered(i, j)
        } else {
            let k = rng.random_range(0..pairs - chosen.len());
            (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|p| !chosen.contains(p))
                .nth(k)
                .expect("k indexes a free pair")
        };
        chosen.insert(e);
        if original.contains(&e) {
            removed.push(e);
        } else {
            added.push(e);
        }
    }
    let flips = FlipList {
        added: added.iter().map(|&(i, j)| [i, j]).collect(),
        removed: removed.iter().map(|&(i, j)| [i, j]).collect(),
    };
    Ok(PerturbedGraph {
        graph: flips.apply(graph)?,
        added_edges: added,
        removed_edges: removed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvasionResult {
    pub clean_acc: f64,
    pub attacked_acc: f64,
}

/// Test accuracy of fixed parameters on the clean and the attacked graph.
pub fn evaluate_evasion(
    spec: &ModelSpec,
    params: &ModelParams,
    clean: &Graph,
    attacked: &Graph,
    split: &Split,
) -> Result<EvasionResult> {
    let acc = |g: &Graph| -> Result<f64> {
        let adj = normalize_adjacency(g);
        Problem::new(spec, &adj, &g.features, &g.labels, &split.test_ids).accuracy(params, &split.test_ids)
    };
    Ok(EvasionResult {
        clean_acc: acc(clean)?,
        attacked_acc: acc(attacked)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisoningResult {
    pub attacked_acc: f64,
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Trains fresh parameters on the attacked graph and reports their test
/// accuracy on it.
pub fn evaluate_poisoning(
    spec: &ModelSpec,
    attacked: &Graph,
    split: &Split,
    cfg: &TrainConfig,
    awp: Option<&AwpConfig>,
) -> Result<PoisoningResult> {
    let (params, report) = train(spec, attacked, split, cfg, awp)?;
    Ok(PoisoningResult {
        attacked_acc: report.test_acc,
        params,
        report,
    })
}
