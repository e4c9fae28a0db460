//! Reverse-mode differentiation of the association objective.

mod pipeline;
mod tape;

pub use pipeline::{
    appearance_loss_and_grad, association_loss, association_matrices, batch_loss_and_grad,
    fd_check, frame_observation, initial_belief, loss_and_grad, GradientReport, LossConfig,
    FD_NOISE_MARGIN,
};
pub use tape::{Gradients, Tape, Var};
