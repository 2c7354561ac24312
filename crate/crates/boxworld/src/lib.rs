//! Box-pushing gridworld used to evaluate tree-structured value networks.
//!
//! An 8×8 board holds an agent, boxes, goals and obstacles. Pushing a box
//! into a goal pays +1; walking off the board ends the episode.

pub mod board;
pub mod conformance;
pub mod env;
pub mod rules;
pub mod trajectory;

pub use board::{
    generate_level, Action, BoardState, Pos, GRID_SIZE, MAX_STEPS, NUM_BOXES, NUM_GOALS,
    NUM_OBSTACLES,
};
pub use env::{
    derive_rng, observe, vec_reset, vec_step, BoxWorld, StepResult, VecEnv, ENV_STREAM_BASE,
    OBS_CHANNELS, OBS_SHAPE,
};
pub use rules::{step, Rules, MAX_STEP_REWARD, MIN_STEP_REWARD};
pub use trajectory::{TrajectoryRecord, TrajectoryWriter};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("episode is over; reset before stepping")]
    EpisodeDone,
    #[error("malformed board: {0}")]
    MalformedBoard(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("trajectory log: {0}")]
    Io(#[from] std::io::Error),
}
