//! Stream assignment under one master seed.
//!
//! Every random consumer draws from its own ChaCha8 stream keyed by the run
//! seed (see [`derive_rng`]), so adding or removing one consumer never shifts
//! the numbers another one sees.

pub use treeqn_boxworld::{derive_rng, ENV_STREAM_BASE};

/// Parameter initialization.
pub const INIT_STREAM: u64 = 0;
/// Exploration and policy sampling during training.
pub const ACTION_STREAM: u64 = 1;
/// Random actions that generate held-out transitions.
pub const HELDOUT_ACTION_STREAM: u64 = 2;
/// Random-policy baseline actions.
pub const RANDOM_POLICY_ACTION_STREAM: u64 = 3;
/// Synthetic inputs for gradient checks.
pub const GRADCHECK_STREAM: u64 = 4;

/// Training environment `i` uses stream `ENV_STREAM_BASE + i`.
pub const HELDOUT_ENV_STREAM_BASE: u64 = 2 << 20;
pub const EVAL_ENV_STREAM: u64 = 3 << 20;
pub const RANDOM_POLICY_ENV_STREAM: u64 = 4 << 20;
