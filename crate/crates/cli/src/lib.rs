//! Command-line front end for WT-AWP experiments.
//!
//! Every command reads one JSON [`ExperimentConfig`], writes its artifacts to
//! `<out>/<config hash>/`, and is a deterministic function of the config.

pub mod commands;
pub mod config;
pub mod output;
pub mod runs;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use wtawp_core::CoreError;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 for configuration and usage problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Core(CoreError::InvalidConfig(_)) => 2,
            CliError::Core(CoreError::Io { .. }) | CliError::Core(CoreError::Parse { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wtawp", version, about = "Weighted truncated adversarial weight perturbation for GNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output root; each run writes to `<out>/<config hash>/`.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads for independent cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train every (split, init) pair and report accuracies.
    Train,
    /// Run the lambda × rho grid.
    Sweep,
    /// Train baseline and variant with matched seeds.
    Paired,
    /// Run one diagnostic.
    Diagnose {
        #[arg(value_enum)]
        which: Diagnostic,
    },
    /// Clean, evasion and poisoning accuracy under an edge attack.
    Attack,
    /// Write the configured dataset in the JSON graph format.
    GenToy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Diagnostic {
    Landscape,
    Smoothness,
    Bound,
    Gradcheck,
    Gapscale,
}

impl Diagnostic {
    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::Landscape => "landscape",
            Diagnostic::Smoothness => "smoothness",
            Diagnostic::Bound => "bound",
            Diagnostic::Gradcheck => "gradcheck",
            Diagnostic::Gapscale => "gapscale",
        }
    }
}

/// Loads the config named by the flags, applying `--seed`.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&cli.config, cli.command) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Command::GenToy) => serde_json::from_str("{}").expect("empty config parses"),
        (None, _) => return Err(CliError::Usage("--config <path> is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs the parsed command and returns the run directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    if cli.jobs < 1 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let cfg = load_config(cli)?;
    let ctx = commands::Context::new(cfg, &cli.out, cli.jobs)?;
    match cli.command {
        Command::Train => commands::train(&ctx)?,
        Command::Sweep => commands::sweep(&ctx)?,
        Command::Paired => commands::paired(&ctx)?,
        Command::Diagnose { which } => commands::diagnose(&ctx, which)?,
        Command::Attack => commands::attack(&ctx)?,
        Command::GenToy => commands::gen_toy(&ctx)?,
    }
    Ok(ctx.dir.clone())
}
