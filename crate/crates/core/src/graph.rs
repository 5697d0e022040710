//! Graph data model, symmetric normalization, synthetic datasets, raw citation
//! dataset ingestion and random splits.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::seed::{self, Stream};

/// Undirected attributed graph with node labels.
///
/// Adjacency is held as sorted neighbour lists; an edge `(i, j)` appears in
/// both `neighbors[i]` and `neighbors[j]`, and no node lists itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Duplicate edges and either
    /// orientation are accepted; self-loops are rejected.
    pub fn new(
        n_nodes: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if features.rows != n_nodes || labels.len() != n_nodes {
            return Err(CoreError::Shape(format!(
                "{n_nodes} nodes but {} feature rows and {} labels",
                features.rows,
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(CoreError::InvalidConfig("non-finite feature entry".into()));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(CoreError::InvalidConfig(format!(
                "class {missing} has no nodes"
            )));
        }
        let mut sets = vec![BTreeSet::new(); n_nodes];
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(CoreError::Shape(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            if a == b {
                return Err(CoreError::InvalidConfig(format!("self-loop at node {a}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        Ok(Self {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            features,
            labels,
            n_classes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Undirected edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            self.n_nodes(),
            edges,
            self.features.clone(),
            self.labels.clone(),
        )
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n_nodes: self.n_nodes(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            features: (0..self.n_nodes())
                .map(|i| self.features.row(i).to_vec())
                .collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn from_json(doc: &GraphJson) -> Result<Self> {
        let features = if doc.features.is_empty() {
            DenseMatrix::zeros(doc.n_nodes, 0)
        } else {
            DenseMatrix::from_rows(&doc.features)?
        };
        let edges: Vec<_> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::new(doc.n_nodes, &edges, features, doc.labels.clone())
    }
}

/// On-disk JSON form of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub n_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// `D^{-1/2}(A+I)D^{-1/2}` in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(pub CsrMatrix);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.n
    }
}

pub fn normalize_adjacency(graph: &Graph) -> NormalizedAdjacency {
    let n = graph.n_nodes();
    let degree: Vec<f64> = (0..n)
        .map(|i| (graph.neighbors(i).len() + 1) as f64)
        .collect();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for i in 0..n {
        let nb = graph.neighbors(i);
        let split = nb.partition_point(|&j| j < i);
        let cols = nb[..split]
            .iter()
            .copied()
            .chain(std::iter::once(i))
            .chain(nb[split..].iter().copied());
        for j in cols {
            indices.push(j);
            // di * dj is commutative in floating point, so the (i, j) and
            // (j, i) entries are bit-identical.
            values.push(1.0 / (degree[i] * degree[j]).sqrt());
        }
        indptr.push(indices.len());
    }
    NormalizedAdjacency(CsrMatrix {
        n,
        indptr,
        indices,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub nodes_per_class: usize,
    pub k_neighbors: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            nodes_per_class: 100,
            k_neighbors: 3,
            noise_std: 0.6,
            seed: 0,
        }
    }
}

/// Class means of the linear toy set.
pub const TOY_MEANS: [[f64; 2]; 2] = [[-1.5, -1.5], [1.5, 1.5]];

/// Two isotropic Gaussian clusters, connected by a symmetrized k-NN graph.
/// Nodes `0..n` belong to class 0 and `n..2n` to class 1.
pub fn generate_linear_toy(cfg: &ToyConfig) -> Result<Graph> {
    if cfg.k_neighbors < 1 {
        return Err(CoreError::InvalidConfig("k_neighbors must be >= 1".into()));
    }
    if cfg.nodes_per_class < cfg.k_neighbors + 1 {
        return Err(CoreError::InvalidConfig(format!(
            "nodes_per_class {} must exceed k_neighbors {}",
            cfg.nodes_per_class, cfg.k_neighbors
        )));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(CoreError::InvalidConfig("noise_std must be >= 0".into()));
    }
    let mut rng = seed::rng(cfg.seed, Stream::Dataset, 0);
    let mut points = Vec::with_capacity(2 * cfg.nodes_per_class);
    let mut labels = Vec::with_capacity(2 * cfg.nodes_per_class);
    for (class, mean) in TOY_MEANS.iter().enumerate() {
        for _ in 0..cfg.nodes_per_class {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            points.push([mean[0] + cfg.noise_std * dx, mean[1] + cfg.noise_std * dy]);
            labels.push(class);
        }
    }
    let edges = knn_edges(&points, cfg.k_neighbors);
    let features = DenseMatrix::from_rows(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>())?;
    Graph::new(points.len(), &edges, features, labels)
}

/// Symmetrized k-nearest-neighbour edges under Euclidean distance; ties in
/// distance go to the lower node id.
pub fn knn_edges(points: &[[f64; 2]], k: usize) -> Vec<(usize, usize)> {
    let n = points.len();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges.into_iter().collect()
}

/// Interleaved half circles with no edges: class 0 on `(cos t, sin t)`,
/// class 1 on `(1 - cos t, 0.5 - sin t)`, `t ~ U[0, π]`.
pub fn generate_two_moons(n_per_class: usize, noise_std: f64, seed: u64) -> Result<Graph> {
    if n_per_class < 1 {
        return Err(CoreError::InvalidConfig("n_per_class must be >= 1".into()));
    }
    let mut rng = seed::rng(seed, Stream::Dataset, 1);
    let mut rows = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for _ in 0..n_per_class {
            let t: f64 = rng.random_range(0.0..=PI);
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            rows.push(vec![x + noise_std * nx, y + noise_std * ny]);
            labels.push(class);
        }
    }
    Graph::new(rows.len(), &[], DenseMatrix::from_rows(&rows)?, labels)
}

/// Nodes of the largest connected component, sorted. Among equally large
/// components the one containing the lowest node id wins.
pub fn largest_component(n: usize, neighbors: &[Vec<usize>]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut members = vec![start];
        comp[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if comp[v] == usize::MAX {
                    comp[v] = start;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best.sort_unstable();
    best
}

/// Reads the raw tab-separated citation format: a content file with
/// `id f_1 .. f_F label` per line and a cites file with `id_a id_b` per line.
///
/// Edges to unknown ids and self-citations are dropped, the graph is made
/// undirected and reduced to its largest connected component, feature rows are
/// scaled to sum to one, and labels are remapped to `0..K` in sorted order of
/// their names.
pub fn load_citation_dataset(content_path: &Path, cites_path: &Path) -> Result<Graph> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|source| CoreError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let content = read(content_path)?;
    let cites = read(cites_path)?;
    let parse_err = |path: &Path, line: usize, message: String| CoreError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width = None;
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(parse_err(content_path, lineno, "expected id and label".into()));
        }
        let feats = tokens[1..tokens.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(content_path, lineno, format!("bad feature {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(parse_err(
                    content_path,
                    lineno,
                    format!("{} features, expected {w}", feats.len()),
                ))
            }
            _ => {}
        }
        if ids.insert(tokens[0].to_string(), rows.len()).is_some() {
            return Err(parse_err(
                content_path,
                lineno,
                format!("duplicate node id {:?}", tokens[0]),
            ));
        }
        rows.push(feats);
        raw_labels.push(tokens[tokens.len() - 1].to_string());
    }

    let n_all = rows.len();
    let mut adjacency = vec![BTreeSet::new(); n_all];
    for (lineno, line) in cites.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(parse_err(
                cites_path,
                lineno,
                format!("expected 2 ids, found {}", tokens.len()),
            ));
        }
        if let (Some(&a), Some(&b)) = (ids.get(tokens[0]), ids.get(tokens[1])) {
            if a != b {
                adjacency[a].insert(b);
                adjacency[b].insert(a);
            }
        }
    }
    let neighbors: Vec<Vec<usize>> = adjacency.into_iter().map(|s| s.into_iter().collect()).collect();
    let keep = largest_component(n_all, &neighbors);
    if keep.is_empty() {
        return Err(CoreError::EmptyGraph);
    }
    let mut remap = vec![usize::MAX; n_all];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let mut edges = Vec::new();
    for &old in &keep {
        for &nb in &neighbors[old] {
            if old < nb {
                edges.push((remap[old], remap[nb]));
            }
        }
    }
    let names: BTreeSet<&str> = keep.iter().map(|&i| raw_labels[i].as_str()).collect();
    let class_of: HashMap<&str, usize> = names.iter().enumerate().map(|(c, &s)| (s, c)).collect();
    let labels = keep.iter().map(|&i| class_of[raw_labels[i].as_str()]).collect();
    let f = width.unwrap_or(0);
    let mut features = DenseMatrix::zeros(keep.len(), f);
    for (new, &old) in keep.iter().enumerate() {
        let sum: f64 = rows[old].iter().sum();
        let scale = if sum != 0.0 { 1.0 / sum } else { 0.0 };
        for (dst, &v) in features.row_mut(new).iter_mut().zip(&rows[old]) {
            *dst = v * scale;
        }
    }
    Graph::new(keep.len(), &edges, features, labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}

impl Split {
    pub fn all_ids(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .train_ids
            .iter()
            .chain(&self.val_ids)
            .chain(&self.test_ids)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }
}

/// `round(n / 10)` with halves rounded up, in integer arithmetic.
pub fn tenth_rounded(n: usize) -> usize {
    (n + 5) / 10
}

/// Uniform random 10% / 10% / 80% partition; each id set is sorted.
pub fn make_split(n_nodes: usize, seed: u64) -> Split {
    let mut perm: Vec<usize> = (0..n_nodes).collect();
    perm.shuffle(&mut seed::rng(seed, Stream::Split, n_nodes as u64));
    let n_train = tenth_rounded(n_nodes);
    let n_val = tenth_rounded(n_nodes);
    let mut train_ids = perm[..n_train].to_vec();
    let mut val_ids = perm[n_train..n_train + n_val].to_vec();
    let mut test_ids = perm[n_train + n_val..].to_vec();
    train_ids.sort_unstable();
    val_ids.sort_unstable();
    test_ids.sort_unstable();
    Split {
        train_ids,
        val_ids,
        test_ids,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        let labels = (0..n).map(|i| i % 2).collect();
        Graph::new(n, edges, DenseMatrix::zeros(n, 1), labels).unwrap()
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = Graph::new(1, &[], DenseMatrix::zeros(1, 1), vec![0]).unwrap();
        assert_eq!(normalize_adjacency(&g).0.to_dense().data, vec![1.0]);
    }

    #[test]
    fn single_edge_and_triangle() {
        let g = path_graph(2, &[(0, 1)]);
        assert_eq!(normalize_adjacency(&g).0.to_dense().data, vec![0.5; 4]);
        let tri = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], DenseMatrix::zeros(3, 1), vec![0, 1, 0])
            .unwrap();
        let a = normalize_adjacency(&tri).0.to_dense();
        for v in a.data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_self_loops_and_missing_classes() {
        assert!(Graph::new(2, &[(1, 1)], DenseMatrix::zeros(2, 1), vec![0, 1]).is_err());
        assert!(Graph::new(2, &[], DenseMatrix::zeros(2, 1), vec![0, 2]).is_err());
    }

    #[test]
    fn toy_shape_and_determinism() {
        let cfg = ToyConfig::default();
        let g = generate_linear_toy(&cfg).unwrap();
        assert_eq!(g.n_nodes(), 200);
        assert_eq!(g.labels.iter().filter(|&&l| l == 0).count(), 100);
        assert_eq!(g.n_features(), 2);
        assert_eq!(g, generate_linear_toy(&cfg).unwrap());
        let other = generate_linear_toy(&ToyConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(g.features, other.features);
    }

    #[test]
    fn toy_rejects_degenerate_configs() {
        let bad = ToyConfig {
            nodes_per_class: 3,
            k_neighbors: 3,
            ..ToyConfig::default()
        };
        assert!(generate_linear_toy(&bad).is_err());
        let zero_k = ToyConfig {
            k_neighbors: 0,
            ..ToyConfig::default()
        };
        assert!(generate_linear_toy(&zero_k).is_err());
    }

    #[test]
    fn knn_two_points_single_edge() {
        assert_eq!(knn_edges(&[[0.0, 0.0], [1.0, 1.0]], 1), vec![(0, 1)]);
    }

    #[test]
    fn knn_tie_prefers_lower_id() {
        // Node 0 is equidistant from 1 and 2.
        let pts = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 0.0]];
        let edges = knn_edges(&pts, 1);
        assert!(edges.contains(&(0, 1)));
    }

    #[test]
    fn moons_without_noise_lie_on_circles() {
        let g = generate_two_moons(4, 0.0, 3).unwrap();
        assert_eq!(g.n_nodes(), 8);
        assert_eq!(g.n_edges(), 0);
        for i in 0..8 {
            let (x, y) = (g.features.get(i, 0), g.features.get(i, 1));
            let r = if g.labels[i] == 0 {
                (x * x + y * y).sqrt()
            } else {
                ((1.0 - x).powi(2) + (0.5 - y).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(g, generate_two_moons(4, 0.0, 3).unwrap());
        assert_eq!(generate_two_moons(100, 0.1, 0).unwrap().n_nodes(), 200);
    }

    #[test]
    fn split_sizes() {
        let s = make_split(200, 4);
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (20, 20, 160));
        assert_eq!(s.all_ids(), (0..200).collect::<Vec<_>>());
        assert_eq!(s, make_split(200, 4));
        assert_ne!(s.train_ids, make_split(200, 5).train_ids);
        // Cora's largest component has 2485 nodes.
        assert_eq!(tenth_rounded(2485), 249);
    }

    #[test]
    fn json_round_trip() {
        let g = generate_linear_toy(&ToyConfig {
            nodes_per_class: 10,
            ..ToyConfig::default()
        })
        .unwrap();
        let text = serde_json::to_string(&g.to_json()).unwrap();
        let back = Graph::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(g, back);
    }
}
