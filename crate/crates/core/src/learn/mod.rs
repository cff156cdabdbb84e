//! Fitting coefficient fields to trajectory data: reverse-mode gradients through
//! the unrolled solver, Adam, and the minibatch training loop.

mod adam;
mod adjoint;
mod train;

pub use adam::{adam_update, OptState};
pub use adjoint::{grad_theta, traj_loss, Gradients, Tape};
pub use train::{
    batch_gradient, init_theta, mean_loss, train, train_with, EpochRecord, Split, StopReason,
    TrainConfig, TrainOutcome, LOSS_THRESHOLD,
};
