//! Minimal dense-tensor core for the TreeQN engine.
//!
//! [`Tape`] records forward computations on `f64` tensors and replays them in
//! reverse to produce gradients. Parameters live in a [`ParamStore`] and are
//! bound onto a fresh tape for each forward pass; [`rmsprop_step`] consumes
//! the gradients written back by [`Tape::backward_into`].

pub mod checkpoint;
pub mod gradcheck;
mod kernels;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use gradcheck::{
    finite_diff_check, finite_diff_check_params, finite_diff_check_selected, relative_error,
    Coverage, GradCheckReport,
};
pub use optim::{rmsprop_step, rmsprop_update, RmsPropConfig, RmsPropState};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{argmax_first, GradMode, Gradients, Tape, Var, L2_NORM_EPS};
pub use tensor::Tensor;
