mod attack;
mod diagnose;
mod paired;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use wtawp_core::Execution;

use crate::config::ExperimentConfig;
use crate::output::{create_dir, run_dir, write_json, write_text};
use crate::runs::Prepared;
use crate::CliError;

pub use attack::attack;
pub use diagnose::diagnose;
pub use paired::{paired, paired_p_value};
pub use sweep::{sweep, verify_sweep, CellRecord};
pub use train::train;

/// A resolved config and its output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub exec: Execution,
}

impl Context {
    /// Creates `<out>/<hash>/` and echoes the config into it.
    pub fn new(cfg: ExperimentConfig, out: &Path, jobs: usize) -> Result<Self, CliError> {
        let dir = run_dir(out, &cfg.content_hash());
        create_dir(&dir)?;
        let mut echoed = cfg.canonical_json();
        echoed.push('\n');
        write_text(&dir.join("config.json"), &echoed)?;
        Ok(Self {
            cfg,
            dir,
            exec: Execution::from_jobs(jobs),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

pub fn gen_toy(ctx: &Context) -> Result<(), CliError> {
    let prep = Prepared::new(&ctx.cfg)?;
    write_json(&ctx.path("graph.json"), &prep.graph.to_json())
}
