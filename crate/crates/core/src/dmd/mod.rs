//! Extended and Hankel DMD: delay-embedded observables, least-squares
//! Koopman fits, iterated reconstruction and spectral diagnostics.

mod fit;
mod hankel;
mod reconstruct;
mod spectrum;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use fit::{fit_global, fit_local, fit_on_tape, FitScope, KoopmanFit, TapeFit};
pub use hankel::{build_hankel, shifted_snapshots, HankelLayout, HankelStack};
pub use reconstruct::{reconstruct, reconstruction_error, ErrorReport, ReconstructionWindow};
pub use spectrum::{spectrum, CMatrix, SpectrumReport, CONDITION_LIMIT, RESIDUAL_LIMIT};

#[derive(Debug, Error)]
pub enum DmdError {
    #[error("delay count {n_ob_bar} out of range 1..={max}")]
    DelayOutOfRange { n_ob_bar: usize, max: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DmdError>;
