//! Networks for tree-structured value estimation on the box-pushing task.
//!
//! [`Network`] covers TreeQN and ATreeC, which plan by recursively applying a
//! learned transition in latent space and backing values up a complete
//! action tree, as well as the DQN, DQN-Deep, DQN-Wide and A2C baselines.
//! All share the same convolutional encoder.

pub mod arch;
pub mod config;
pub mod layers;
pub mod network;
pub mod tree;

pub use arch::{Arch, UnknownArch};
pub use config::{Backup, ConvSpec, ModelDims, NormPlacement, TreeConfig};
pub use network::{Forward, Network};
pub use tree::{path_index, TreeNode, TreeOutput};
