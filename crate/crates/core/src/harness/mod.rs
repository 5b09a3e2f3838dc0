//! Experiment orchestration: training and evaluation runs, metrics, the
//! Monte-Carlo value oracle, popularity analysis, window sweeps and the CLI.

pub mod cli;
mod config;
mod metrics;
mod oracle;
mod popularity;
mod report;
mod run;
mod world;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ExperimentConfig, RunConfig, CONFIG_VERSION};
pub use metrics::{identity_gap, EpisodeMetrics, MetricsReport, SeedMetrics};
pub use oracle::{critic_variance_study, mc_state_value, McEstimate, ProbeReport};
pub use popularity::{popularity_analysis, popularity_buckets, PopularityReport, ShareMode};
pub use report::{write_report, Report};
pub use run::{
    build_agent, episode_plan, evaluate, run_ablation, run_experiment, seed_list, sweep_window, train,
    AblationEntry, ExperimentRun, SeedRun, Variant,
};
pub use world::{World, TEST_WORLD_FILE, TRAIN_WORLD_FILE};

use crate::agent::AgentError;
use crate::catalog::CatalogError;
use crate::env::EnvError;
use crate::llm::{LlmError, PromptError};
use crate::memory::MemoryError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}
