//! MSE training with AdamW, checkpointing, and evaluation against the
//! input baseline.

pub mod eval;
pub mod optim;
pub mod trainer;

pub use eval::{denoise_image, evaluate, evaluate_with, Evaluation};
pub use optim::{adamw_step, clip_grad_norm, OptimConfig};
pub use trainer::{train, EpochRecord, StepRecord, TrainLog, TrainOutputs, Trainer};

use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Mean squared error between prediction and target.
pub fn loss_mse<T: Real>(tape: &mut Tape<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    tape.mse(pred, target)
}
