//! Synchronous n-step training for TreeQN, ATreeC and their baselines.
//!
//! A [`Trainer`] rolls 16 environments forward 5 steps under the current
//! network, builds an n-step Q-learning or actor-critic loss on the 80
//! transitions plus optional reward and latent-state grounding terms, and
//! takes one RMSProp step. Q-learning runs bootstrap from a periodically
//! copied [`TargetNetwork`].

pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod rollout;
pub mod seeding;
pub mod target;
pub mod trainer;

use thiserror::Error;
use treeqn_autodiff::CheckpointError;
use treeqn_boxworld::EnvError;

pub use config::TrainConfig;
pub use eval::{
    evaluate, heldout_reward_mse, heldout_transitions, random_policy_returns, return_band,
    EvalStats,
};
pub use losses::{batch_loss, LossConfig, LossTerms};
pub use rollout::{collect_rollout, epsilon_at, Acting, EpisodeTracker, RolloutBatch};
pub use target::TargetNetwork;
pub use trainer::{load_network, MetricsRow, RunSummary, Trainer, UpdateStats};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("non-finite {what} at update {update}")]
    NonFinite {
        what: String,
        update: u64,
        report: String,
    },
}
