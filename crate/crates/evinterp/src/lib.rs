//! Event-guided video frame interpolation at desk scale.
//!
//! The pipeline runs end to end on a CPU: simulate an event stream from a
//! dense frame sequence, represent event windows as compact tensors, estimate
//! bidirectional optical flow guided by those tensors, synthesize intermediate
//! frames with visibility-weighted blending, and train the whole thing without
//! ground-truth intermediate frames via temporal cycle consistency.
//!
//! Modules mirror the data flow:
//!
//! * [`event`]: event types, stream windows, simulation from frames, file IO
//! * [`scene`]: synthetic scene rendering and skip-frame dataset assembly
//! * [`autodiff`]: a small reverse-mode tape over `ndarray`, plus the neural
//!   network layers and optimizer built on it
//! * [`model`]: flow estimation, differentiable warping, refinement, and
//!   frame synthesis
//! * [`train`]: cycle-consistency training loop and losses
//! * [`eval`]: image metrics, skip-k evaluation, ablation variants
//! * [`cli`]: configuration and the subcommand entry points

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod event;
pub mod model;
pub mod scene;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book_doctests;
