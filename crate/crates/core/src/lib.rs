//! Windowed-attention, nested-skip U-shaped denoiser for low-dose CT.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`ops`], [`tape`]: dense tensors, pure kernels, and a
//!   recorded reverse-mode tape over them.
//! * [`window`]: window partition/merge and windowed multi-head attention
//!   with a learnable relative position bias.
//! * [`block`]: the window transformer block and its convolutional
//!   feed-forward.
//! * [`net`]: configuration, node graph, checkpoints, and the full
//!   encoder / nested-skip / decoder assembly.
//! * [`metrics`] and [`data`]: image quality measures and synthetic corpora.
//! * [`train`]: the AdamW loop and evaluation.
//! * [`gradcheck`] and [`bench`]: finite-difference checks and attention
//!   timing.

pub mod bench;
pub mod block;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod params;
pub mod real;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod window;

pub use error::{Error, Result};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
