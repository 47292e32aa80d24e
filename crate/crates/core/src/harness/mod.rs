//! Rollout collection, training loop and exports for desk-scale runs.

pub mod config;
pub mod export;
pub mod golden;
pub mod group;
pub mod rollout;
pub mod synthetic;
pub mod training;

use thiserror::Error;

pub use config::{ConfigError, RunConfig, CONFIG_ENV_VAR};
pub use export::{emit_curves, export_batch, export_diagnostics, export_metrics, export_rollouts};
pub use group::{run_group, GroupOutcome, RolloutResult};
pub use rollout::{
    derive_seed, run_rollout, Rollout, RolloutPolicy, ScriptItem, ScriptedPolicy, StochasticPolicy,
};
pub use training::{moving_average, run_training, IterationSummary, TrainingRun};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] crate::retrieval::EnvError),
    #[error(transparent)]
    Reward(#[from] crate::reward::RewardError),
    #[error(transparent)]
    Advantage(#[from] crate::advantage::AdvantageError),
    #[error(transparent)]
    Objective(#[from] crate::objective::ObjectiveError),
    #[error("script: {0}")]
    Script(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
