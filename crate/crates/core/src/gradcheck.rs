//! Central finite differences, used as an independent check of the analytic
//! gradients.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::exec::{map_indexed, Execution};
use crate::graph::{make_split, normalize_adjacency, Graph, NormalizedAdjacency};
use crate::linalg::DenseMatrix;
use crate::nn::{GradientSet, ModelKind, ModelParams, ModelSpec, Problem};
use crate::seed::{self, Stream};

/// Entrywise error: zero when `|a - n| <= abs_floor`, otherwise
/// `|a - n| / max(|a|, |n|)`. Returns the maximum over all entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff <= abs_floor {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Central differences of any scalar function of the parameters.
pub fn fd_gradient<F>(params: &ModelParams, h: f64, exec: Execution, f: F) -> Result<GradientSet>
where
    F: Fn(&ModelParams) -> Result<f64> + Sync + Send,
{
    let flat = map_indexed(exec, params.n_entries(), |k| {
        let mut plus = params.clone();
        *plus.entry_mut(k) += h;
        let mut minus = params.clone();
        *minus.entry_mut(k) -= h;
        Ok((f(&plus)? - f(&minus)?) / (2.0 * h))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(GradientSet::from_flat(params, &flat))
}

/// Central differences of the loss with respect to every weight entry.
pub fn fd_param_grad(
    problem: &Problem<'_>,
    params: &ModelParams,
    h: f64,
    dropout_seed: Option<u64>,
    exec: Execution,
) -> Result<GradientSet> {
    fd_gradient(params, h, exec, |p| problem.loss_at(p, dropout_seed))
}

/// Central differences of the loss with respect to every feature entry.
pub fn fd_feature_grad(problem: &Problem<'_>, params: &ModelParams, h: f64) -> Result<DenseMatrix> {
    let x = problem.features;
    let mut out = DenseMatrix::zeros(x.rows, x.cols);
    for k in 0..x.data.len() {
        let mut plus = x.clone();
        plus.data[k] += h;
        let mut minus = x.clone();
        minus.data[k] -= h;
        let lp = problem.with_features(&plus).loss_at(params, None)?;
        let lm = problem.with_features(&minus).loss_at(params, None)?;
        out.data[k] = (lp - lm) / (2.0 * h);
    }
    Ok(out)
}

/// A random graph small enough for entrywise finite differences.
#[derive(Debug, Clone)]
pub struct SmallInstance {
    pub graph: Graph,
    pub adj: NormalizedAdjacency,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub nodes: Vec<usize>,
}

impl SmallInstance {
    /// `n_nodes ≤ 8` and every dimension `≤ 5`, all drawn from `seed`.
    pub fn random(kind: ModelKind, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed, Stream::Instance, kind as u64);
        let n = rng.random_range(4..=8usize);
        let f = rng.random_range(2..=5usize);
        let h = rng.random_range(2..=5usize);
        let k = rng.random_range(2..=n.min(5));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.4 {
                    edges.push((i, j));
                }
            }
        }
        let features = DenseMatrix {
            rows: n,
            cols: f,
            data: (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        // First k nodes cover every class; the rest are random.
        let labels = (0..n)
            .map(|i| if i < k { i } else { rng.random_range(0..k) })
            .collect();
        let graph = Graph::new(n, &edges, features, labels)?;
        let adj = normalize_adjacency(&graph);
        let mut spec = ModelSpec::new(kind, f, h, k).with_dropout(0.0);
        spec.ppnp_k = rng.random_range(0..=4);
        spec.ppnp_alpha = rng.random_range(0.05..0.9);
        // Larger-than-Glorot weights keep gradients well above the FD noise.
        let mut params = spec.init_params(seed);
        for w in &mut params.layers {
            w.scale_in_place(1.5);
        }
        let split = make_split(n, seed);
        let mut nodes = split.train_ids.clone();
        nodes.extend(&split.val_ids);
        nodes.extend(split.test_ids.iter().take(3));
        nodes.sort_unstable();
        Ok(Self {
            graph,
            adj,
            spec,
            params,
            nodes,
        })
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem::new(
            &self.spec,
            &self.adj,
            &self.graph.features,
            &self.graph.labels,
            &self.nodes,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub model: ModelKind,
    pub seed: u64,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Analytic vs finite-difference parameter gradients on a random instance.
pub fn check_model(kind: ModelKind, seed: u64, dropout_seed: Option<u64>) -> Result<GradCheckRow> {
    let mut inst = SmallInstance::random(kind, seed)?;
    if dropout_seed.is_some() {
        inst.spec.dropout_rate = 0.3;
    }
    let problem = inst.problem();
    let (_, analytic) = problem.loss_and_grad(&inst.params, dropout_seed)?;
    let numeric = fd_param_grad(&problem, &inst.params, 1e-5, dropout_seed, Execution::Sequential)?;
    let (a, n) = (analytic.flatten(), numeric.flatten());
    Ok(GradCheckRow {
        model: kind,
        seed,
        entries: inst.params.n_entries(),
        max_rel_err: max_relative_error(&a, &n, 1e-8),
        max_abs_err: a.iter().zip(&n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
    })
}
