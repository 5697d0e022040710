//! The (split, init) grid shared by all commands.

use serde::{Deserialize, Serialize};

use wtawp_core::awp::AwpConfig;
use wtawp_core::graph::{make_split, normalize_adjacency, Graph, NormalizedAdjacency, Split};
use wtawp_core::nn::{ModelParams, ModelSpec};
use wtawp_core::train::{train_with_adjacency, TrainConfig, TrainReport};

use crate::config::{AwpSection, ExperimentConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub split_index: usize,
    pub split_seed: u64,
    pub init_index: usize,
    pub init_seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("s{}_i{}", self.split_index, self.init_index)
    }
}

/// Split-major order: all inits of split 0, then split 1, ...
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    (0..cfg.splits)
        .flat_map(|s| {
            (0..cfg.inits_per_split).map(move |i| Cell {
                split_index: s,
                split_seed: cfg.split_seed(s),
                init_index: i,
                init_seed: cfg.init_seed(i),
            })
        })
        .collect()
}

/// Dataset and model shared by every cell of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: Graph,
    pub adj: NormalizedAdjacency,
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let graph = cfg.dataset.load()?;
        Ok(Self::from_graph(cfg, graph))
    }

    pub fn from_graph(cfg: &ExperimentConfig, graph: Graph) -> Self {
        let adj = normalize_adjacency(&graph);
        let spec = cfg.model_spec(&graph);
        Self {
            graph,
            adj,
            spec,
            train: cfg.train.clone(),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.spec.layer_shapes().len()
    }

    pub fn awp(&self, section: Option<&AwpSection>) -> Result<Option<AwpConfig>, CliError> {
        match section {
            None => Ok(None),
            Some(s) => {
                let c = s.to_config(self.n_layers());
                c.validate(self.n_layers())?;
                Ok(Some(c))
            }
        }
    }

    pub fn split(&self, cell: &Cell) -> Split {
        make_split(self.graph.n_nodes(), cell.split_seed)
    }

    pub fn train_cell(
        &self,
        cell: &Cell,
        awp: Option<&AwpConfig>,
    ) -> Result<(Split, ModelParams, TrainReport), CliError> {
        let split = self.split(cell);
        let cfg = TrainConfig {
            seed: cell.init_seed,
            ..self.train.clone()
        };
        let (params, report) = train_with_adjacency(&self.spec, &self.graph, &self.adj, &split, &cfg, awp)?;
        Ok((split, params, report))
    }
}
