//! Mutual information between scalar series and the lagged self-information
//! tables built from it.

mod alsi;
mod estimator;

use thiserror::Error;

pub use alsi::{alsi, alsi_compare, first_local_max, AlsiComparison, AlsiTable, PairComparison, Source};
pub use estimator::{histogram_mi, mutual_information, MiEstimate, DEFAULT_K, HISTOGRAM_BINS, MIN_SAMPLES};

#[derive(Debug, Error)]
pub enum MiError {
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, MiError>;
