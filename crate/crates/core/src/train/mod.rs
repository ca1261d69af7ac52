//! Autoencoder training with Hankel DMD in the latent space.
//!
//! Each batch is encoded, delay-embedded and fitted with one global Koopman
//! operator; the loss combines reconstruction, latent prediction, decoded
//! prediction and a weight penalty. After every epoch the delay count moves
//! by at most one when that lowers the loss by more than a relative threshold.

mod adam;
mod config;
mod loss;
mod model;
mod run;
mod schedule;
mod tune;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::dmd::DmdError;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use config::TrainConfig;
pub use loss::{compute_losses, evaluate_losses, predict, prediction_error_pct, Batch, LossGraph, LossReport, LossSpec, Prediction, Split};
pub use model::{decode, encode, forward_on_tape, AutoencoderParams, Layer, ParamVars, AFFINE_MAPS};
pub use run::{spec, train, train_from, Checkpoint, EpochRecord, ABORT_AFTER};
pub use schedule::{apply_update_rule, candidates, replay, update_n_ob_bar, DelayUpdate};
pub use tune::{tune, SearchSpace, Trial};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("run aborted after epoch {epoch}: losses stayed non-finite")]
    Aborted { epoch: usize, checkpoint: Box<run::Checkpoint> },
    #[error("tuning failed: {0}")]
    Tuning(String),
    #[error(transparent)]
    Dmd(#[from] DmdError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;
