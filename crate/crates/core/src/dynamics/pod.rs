use super::{DynamicsError, Result};
use crate::autodiff::{svd_factors, Matrix};

/// Band `[10^-1.9, 10^-1.1]` for the ratio of the last kept to the first
/// singular value, used as a sanity flag on KS reductions.
pub const POD_RATIO_BAND: (f64, f64) = (0.012589254117941675, 0.07943282347242814);

const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PodReduction {
    /// `space × n_modes`, orthonormal columns.
    pub spatial_modes: Matrix,
    /// `n_modes × time`: singular values times right singular vectors.
    pub time_modes: Matrix,
    /// All singular values of the field, descending.
    pub singular_values: Vec<f64>,
    /// Fraction of `Σ s²` captured by the kept modes.
    pub energy_fraction: f64,
    /// `s[n_modes - 1] / s[0]`.
    pub ratio: f64,
    pub ratio_in_band: bool,
}

impl PodReduction {
    pub fn reconstruct(&self) -> Matrix {
        &self.spatial_modes * &self.time_modes
    }
}

/// Snapshot POD of a `space × time` field keeping `n_modes` modes.
pub fn pod_reduce(field: &Matrix, n_modes: usize) -> Result<PodReduction> {
    if n_modes == 0 {
        return Err(DynamicsError::InvalidArgument("POD needs at least one mode".into()));
    }
    let f = svd_factors(field, RANK_TOL)?;
    if n_modes > f.rank {
        return Err(DynamicsError::PodRank { requested: n_modes, rank: f.rank });
    }
    let spatial_modes = f.u.columns(0, n_modes).into_owned();
    let mut time_modes = f.w.columns(0, n_modes).transpose();
    for (i, mut row) in time_modes.row_iter_mut().enumerate() {
        row *= f.s[i];
    }
    let total: f64 = f.spectrum.iter().map(|s| s * s).sum();
    let kept: f64 = f.spectrum[..n_modes].iter().map(|s| s * s).sum();
    let ratio = f.s[n_modes - 1] / f.s[0];
    Ok(PodReduction {
        spatial_modes,
        time_modes,
        singular_values: f.spectrum,
        energy_fraction: kept / total,
        ratio,
        ratio_in_band: (POD_RATIO_BAND.0..=POD_RATIO_BAND.1).contains(&ratio),
    })
}
