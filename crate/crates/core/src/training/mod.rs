//! Training objective, winner-takes-more weighting, the toy denoiser and its
//! optimizer.

mod loss;
mod model;
mod optim;
mod toy;
mod trainer;

pub use loss::{alpha_tau, compute_losses, smooth_l1, smooth_l1_grad, wtm_weights, LossTerms, LossWeights, WtmConfig};
pub use model::{timestep_embedding, Activation, Dense, ForwardCache, ModelConfig, ToyDenoiser, MODEL_MAGIC, MODEL_VERSION};
pub use optim::{grad_norm, Optimizer, OptimizerConfig};
pub use toy::{train_reach_policy, ToyTrainConfig, REACH_KNOTS};
pub use trainer::{
    draw_candidates, finite_diff_check, fit, loss_and_grad, train_step, CandidateDraw, StepStats, TrainContext, TrainSample,
    TrainerConfig,
};

use crate::kinematics::KinematicsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("timestep {tau} outside [0, {steps})")]
    TimestepOutOfRange { tau: usize, steps: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite loss {loss} (mean alpha {alpha}, grad norm {grad_norm})")]
    NonFiniteLoss { loss: f64, alpha: f64, grad_norm: f64 },
    #[error("training data: {0}")]
    Data(String),
    #[error("model file: {0}")]
    BadModelFile(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
