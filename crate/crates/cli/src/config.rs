//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wtawp_core::analysis::{LandscapeProbe, SmoothnessConfig};
use wtawp_core::attacks::AttackKind;
use wtawp_core::awp::{AwpConfig, Projection};
use wtawp_core::graph::{generate_linear_toy, generate_two_moons, load_citation_dataset, Graph, GraphJson, ToyConfig};
use wtawp_core::nn::{ModelKind, ModelSpec};
use wtawp_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    LinearToy {
        #[serde(default = "default_nodes_per_class")]
        nodes_per_class: usize,
        #[serde(default = "default_k")]
        k_neighbors: usize,
        #[serde(default = "default_toy_noise")]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
        /// Drop all edges, for models that ignore the graph.
        #[serde(default)]
        no_edges: bool,
    },
    TwoMoons {
        #[serde(default = "default_nodes_per_class")]
        n_per_class: usize,
        #[serde(default = "default_moons_noise")]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
    Citation {
        content: PathBuf,
        cites: PathBuf,
    },
    Json {
        path: PathBuf,
    },
}

fn default_nodes_per_class() -> usize {
    100
}
fn default_k() -> usize {
    3
}
fn default_toy_noise() -> f64 {
    0.6
}
fn default_moons_noise() -> f64 {
    0.1
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::LinearToy {
            nodes_per_class: 100,
            k_neighbors: 3,
            noise_std: 0.6,
            seed: 0,
            no_edges: false,
        }
    }
}

impl DatasetConfig {
    /// Paths that must exist before anything runs.
    fn files(&self) -> Vec<&Path> {
        match self {
            Self::Citation { content, cites } => vec![content, cites],
            Self::Json { path } => vec![path],
            _ => Vec::new(),
        }
    }

    pub fn load(&self) -> Result<Graph, CliError> {
        let graph = match self {
            Self::LinearToy {
                nodes_per_class,
                k_neighbors,
                noise_std,
                seed,
                no_edges,
            } => {
                let g = generate_linear_toy(&ToyConfig {
                    nodes_per_class: *nodes_per_class,
                    k_neighbors: *k_neighbors,
                    noise_std: *noise_std,
                    seed: *seed,
                })?;
                if *no_edges {
                    g.with_edges(&[])?
                } else {
                    g
                }
            }
            Self::TwoMoons {
                n_per_class,
                noise_std,
                seed,
            } => generate_two_moons(*n_per_class, *noise_std, *seed)?,
            Self::Citation { content, cites } => load_citation_dataset(content, cites)?,
            Self::Json { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let doc: GraphJson = serde_json::from_str(&text).map_err(|e| CliError::Config {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Graph::from_json(&doc)?
            }
        };
        Ok(graph)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub ppnp_k: usize,
    pub ppnp_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gcn2,
            ppnp_k: 10,
            ppnp_alpha: 0.1,
        }
    }
}

/// Which layers receive the weight perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSelection {
    Named(NamedLayers),
    Mask(Vec<bool>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedLayers {
    First,
    AllButLast,
    All,
}

impl LayerSelection {
    pub fn mask(&self, n_layers: usize) -> Vec<bool> {
        match self {
            Self::Named(NamedLayers::First) => (0..n_layers).map(|i| i == 0).collect(),
            Self::Named(NamedLayers::AllButLast) => (0..n_layers).map(|i| i + 1 < n_layers).collect(),
            Self::Named(NamedLayers::All) => vec![true; n_layers],
            Self::Mask(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwpSection {
    pub rho: f64,
    pub lambda: f64,
    #[serde(default = "default_pgd_steps")]
    pub pgd_steps: usize,
    #[serde(default = "default_pgd_lr")]
    pub pgd_lr: f64,
    #[serde(default = "default_layers")]
    pub layers: LayerSelection,
    #[serde(default)]
    pub projection: Projection,
}

fn default_pgd_steps() -> usize {
    1
}
fn default_pgd_lr() -> f64 {
    0.2
}
fn default_layers() -> LayerSelection {
    LayerSelection::Named(NamedLayers::First)
}

impl AwpSection {
    pub fn to_config(&self, n_layers: usize) -> AwpConfig {
        AwpConfig {
            rho: self.rho,
            lambda: self.lambda,
            pgd_steps: self.pgd_steps,
            pgd_lr: self.pgd_lr,
            perturb_layers: self.layers.mask(n_layers),
            projection: self.projection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    /// `[lambda, rho]` of the cell other cells are tested against; defaults
    /// to the first cell.
    #[serde(default)]
    pub baseline: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Evasion,
    Poisoning,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub budget_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub protocol: Protocol,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairedSection {
    /// Perturbation for the baseline arm; `None` means plain training.
    pub baseline_awp: Option<AwpSection>,
    pub smoothness: SmoothnessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    /// Defaults to `sqrt(d)`.
    pub m: Option<f64>,
    pub confidence_delta: f64,
    pub rhos: Vec<f64>,
    pub sharpness_samples: usize,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            m: None,
            confidence_delta: 0.05,
            rhos: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            sharpness_samples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub instances: u64,
    pub models: Vec<ModelKind>,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 20,
            models: vec![ModelKind::Gcn2, ModelKind::Ppnp, ModelKind::Mlp3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapscaleSection {
    pub instance_seed: u64,
    pub model: ModelKind,
    pub rhos: Vec<f64>,
    pub probe_eps: f64,
    pub max_entries: usize,
}

impl Default for GapscaleSection {
    fn default() -> Self {
        Self {
            instance_seed: 0,
            model: ModelKind::Gcn2,
            rhos: vec![0.0, 0.01, 0.02, 0.04],
            probe_eps: 1e-5,
            max_entries: wtawp_core::awp::GAP_ENTRY_CAP,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub landscape: LandscapeProbe,
    pub smoothness: SmoothnessConfig,
    pub bound: BoundSection,
    pub gradcheck: GradcheckSection,
    pub gapscale: GapscaleSection,
    /// Parameters to diagnose instead of training inline.
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub awp: Option<AwpSection>,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default = "default_inits")]
    pub inits_per_split: usize,
    /// Base seed: split `s` uses `seed + s`, init `i` uses `seed·1000 + i`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub paired: PairedSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

fn default_splits() -> usize {
    20
}
fn default_inits() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn validate(&self, origin: &Path) -> Result<(), CliError> {
        let bad = |message: String| CliError::Config {
            path: origin.to_path_buf(),
            message,
        };
        if self.splits < 1 || self.inits_per_split < 1 {
            return Err(bad("splits and inits_per_split must be >= 1".into()));
        }
        for f in self.dataset.files() {
            if !f.exists() {
                return Err(CliError::Config {
                    path: f.to_path_buf(),
                    message: "dataset file not found".into(),
                });
            }
        }
        if let Some(g) = &self.grid {
            if g.lambdas.is_empty() || g.rhos.is_empty() {
                return Err(bad("grid needs at least one lambda and one rho".into()));
            }
        }
        self.train.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn split_seed(&self, split_index: usize) -> u64 {
        self.seed + split_index as u64
    }

    pub fn init_seed(&self, init_index: usize) -> u64 {
        self.seed * 1000 + init_index as u64
    }

    pub fn model_spec(&self, graph: &Graph) -> ModelSpec {
        let mut spec = self.train.model_spec(self.model.kind, graph);
        spec.ppnp_k = self.model.ppnp_k;
        spec.ppnp_alpha = self.model.ppnp_alpha;
        spec
    }

    pub fn awp_config(&self, n_layers: usize) -> Option<AwpConfig> {
        self.awp.as_ref().map(|a| a.to_config(n_layers))
    }

    /// Canonical JSON used for hashing and echoing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"dataset": {"kind": "linear_toy"}}"#).unwrap();
        assert_eq!(cfg.splits, 20);
        assert_eq!(cfg.inits_per_split, 10);
        assert_eq!(cfg.train, TrainConfig::default());
        assert!(cfg.awp.is_none());
        assert_eq!(cfg.dataset, DatasetConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dataset": {"kind": "linear_toy"}, "lamda": 1}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"awp": {"rho": 1, "lambda": 0.5, "projection": "sphere", "lamda": 2}}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dataset": {"kind": "linear_toy", "k": 3}}"#).is_err());
    }

    #[test]
    fn layer_selection_forms() {
        let a: AwpSection = serde_json::from_str(r#"{"rho": 1, "lambda": 1, "layers": "all_but_last"}"#).unwrap();
        assert_eq!(a.to_config(3).perturb_layers, vec![true, true, false]);
        let b: AwpSection = serde_json::from_str(r#"{"rho": 1, "lambda": 1, "layers": [false, true]}"#).unwrap();
        assert_eq!(b.to_config(2).perturb_layers, vec![false, true]);
        let c: AwpSection = serde_json::from_str(r#"{"rho": 1, "lambda": 1}"#).unwrap();
        assert_eq!(c.to_config(2).perturb_layers, vec![true, false]);
        assert_eq!(c.projection, Projection::Ball);
    }

    #[test]
    fn seed_derivation() {
        let cfg = ExperimentConfig {
            seed: 7,
            ..serde_json::from_str(r#"{}"#).unwrap()
        };
        assert_eq!(cfg.split_seed(3), 10);
        assert_eq!(cfg.init_seed(2), 7002);
    }

    #[test]
    fn hash_changes_with_content() {
        let a: ExperimentConfig = serde_json::from_str(r#"{}"#).unwrap();
        let mut b = a.clone();
        b.seed = 1;
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }
}
