use super::{DmdError, HankelStack, KoopmanFit, Result};
use crate::autodiff::Matrix;

/// How an output column relates to the recorded data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionWindow {
    /// Target time is itself a window start; compared directly.
    Reconstruction,
    /// Target lies past the last window start but inside the recording.
    Iterated,
    /// Target lies past the end of the recording.
    Forecast,
}

impl ReconstructionWindow {
    /// Classifies output column `w` (0-based window start) at `n_st` steps.
    pub fn classify(cols_per_traj: usize, steps: usize, w: usize, n_st: usize) -> Self {
        let target = w + n_st;
        if target < cols_per_traj {
            Self::Reconstruction
        } else if target < steps {
            Self::Iterated
        } else {
            Self::Forecast
        }
    }
}

/// `K̄_M · K_aⁿ · Ψ₋`. Column `w` of trajectory `k` approximates the
/// snapshot at time `w + n_st`.
pub fn reconstruct(fit: &KoopmanFit, stack: &HankelStack, n_st: usize) -> Result<Matrix> {
    let n_ob = stack.layout.n_ob();
    if fit.k_a.shape() != (n_ob, n_ob) || fit.k_m_bar.ncols() != n_ob {
        return Err(DmdError::Shape(format!(
            "fit with K_a {:?} does not match {n_ob} observables",
            fit.k_a.shape()
        )));
    }
    let mut advanced = stack.psi_minus.clone();
    if n_st > 0 {
        let mut power = fit.k_a.clone();
        for _ in 1..n_st {
            power = &fit.k_a * power;
        }
        advanced = power * advanced;
    }
    Ok(&fit.k_m_bar * advanced)
}

/// Relative errors of a reconstruction against the source batch, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub n_st: usize,
    /// Max over trajectories of `100 · ‖Ŷ − Y‖_F / ‖Y‖_F` over columns whose
    /// target is a window start. `None` when no such column exists.
    pub max_pct_reconstruction: Option<f64>,
    /// Same, also counting iterated columns whose target is still recorded.
    pub max_pct_with_iterated: Option<f64>,
    pub per_trajectory: Vec<f64>,
    pub reconstruction_cols: usize,
    pub iterated_cols: usize,
    pub forecast_cols: usize,
}

/// Errors of `reconstruct(fit, stack, n_st)` against `truth`, the batch the
/// stack was built from (or its latent image).
pub fn reconstruction_error(fit: &KoopmanFit, stack: &HankelStack, truth: &Matrix, n_st: usize) -> Result<ErrorReport> {
    let l = &stack.layout;
    if truth.shape() != (fit.k_m_bar.nrows(), l.n_batch * l.steps) {
        return Err(DmdError::Shape(format!(
            "truth is {:?}, expected ({}, {})",
            truth.shape(),
            fit.k_m_bar.nrows(),
            l.n_batch * l.steps
        )));
    }
    let per = l.cols_per_traj();
    let pred = reconstruct(fit, stack, n_st)?;
    let recon = per.saturating_sub(n_st);
    let with_iter = (l.steps.saturating_sub(n_st)).min(per);
    let per_traj = |count: usize| -> Vec<f64> {
        if count == 0 {
            return Vec::new();
        }
        let target = Matrix::from_fn(truth.nrows(), l.n_batch * count, |i, c| {
            truth[(i, (c / count) * l.steps + c % count + n_st)]
        });
        (0..l.n_batch)
            .map(|k| {
                let p = pred.columns(k * per, count);
                let t = target.columns(k * count, count);
                100.0 * (p - t).norm() / t.norm()
            })
            .collect()
    };
    let max = |v: &[f64]| v.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    let per_trajectory = per_traj(recon);
    let iterated = per_traj(with_iter);
    Ok(ErrorReport {
        n_st,
        max_pct_reconstruction: max(&per_trajectory),
        max_pct_with_iterated: max(&iterated),
        per_trajectory,
        reconstruction_cols: recon,
        iterated_cols: with_iter - recon,
        forecast_cols: per - with_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DIAGNOSTIC_REL_TOL;
    use crate::dmd::{build_hankel, fit_global, shifted_snapshots};

    fn targets(y: &Matrix, h: &HankelStack, n_st: usize, count: usize) -> Matrix {
        shifted_snapshots(y, &h.layout, n_st, count)
    }

    fn linear_batch(a: &Matrix, x0s: &[Vec<f64>], steps: usize) -> Matrix {
        let mut out = Matrix::zeros(a.nrows(), x0s.len() * steps);
        for (k, x0) in x0s.iter().enumerate() {
            let mut x = nalgebra::DVector::from_column_slice(x0);
            for t in 0..steps {
                out.column_mut(k * steps + t).copy_from(&x);
                x = a * x;
            }
        }
        out
    }

    fn fitted(y: &Matrix, n_batch: usize, n_ob_bar: usize) -> (HankelStack, KoopmanFit) {
        let h = build_hankel(y, n_batch, n_ob_bar).unwrap();
        let s = targets(y, &h, 0, h.layout.cols_per_traj());
        let f = fit_global(&h, &s, DIAGNOSTIC_REL_TOL).unwrap();
        (h, f)
    }

    #[test]
    fn classification() {
        use ReconstructionWindow::*;
        // 10 samples, N̄_ob = 3: N_w = 8, 7 window starts
        assert_eq!(ReconstructionWindow::classify(7, 10, 0, 6), Reconstruction);
        assert_eq!(ReconstructionWindow::classify(7, 10, 1, 6), Iterated);
        assert_eq!(ReconstructionWindow::classify(7, 10, 3, 6), Iterated);
        assert_eq!(ReconstructionWindow::classify(7, 10, 4, 6), Forecast);
    }

    #[test]
    fn zero_steps_returns_snapshot_fit() {
        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.3, -0.3, 0.9]);
        let y = linear_batch(&a, &[vec![1.0, 0.0], vec![0.0, 1.0]], 20);
        let (h, f) = fitted(&y, 2, 1);
        let r = reconstruct(&f, &h, 0).unwrap();
        let t = targets(&y, &h, 0, 19);
        assert!((r - t).norm() < 1e-10);
    }

    #[test]
    fn linear_data_advances_exactly() {
        let a = Matrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.2, 0.9, 0.1, 0.0, -0.1, 0.95]);
        let y = linear_batch(&a, &[vec![1.0, 0.0, 0.2], vec![0.1, 1.0, -0.5], vec![0.3, 0.3, 0.3]], 40);
        let (h, f) = fitted(&y, 3, 1);
        for n_st in [1usize, 5, 20] {
            let r = reconstruct(&f, &h, n_st).unwrap();
            // oracle: A^n · y_w for every window start w
            let an = (0..n_st).fold(Matrix::identity(3, 3), |p, _| &a * p);
            let expect = an * &h.psi_minus;
            assert!((&r - &expect).amax() < 1e-8, "n_st = {n_st}");
            let e = reconstruction_error(&f, &h, &y, n_st).unwrap();
            assert!(e.max_pct_reconstruction.unwrap() < 1e-6);
            assert!(e.max_pct_with_iterated.unwrap() < 1e-6);
            assert_eq!(e.reconstruction_cols + e.iterated_cols + e.forecast_cols, 39);
        }
    }

    #[test]
    fn window_counts() {
        let y = Matrix::from_fn(1, 30, |_, j| (0.4 * j as f64).sin());
        let (h, f) = fitted(&y, 1, 5);
        // 30 samples, N_w = 26, 25 window starts
        let e = reconstruction_error(&f, &h, &y, 20).unwrap();
        assert_eq!((e.reconstruction_cols, e.iterated_cols, e.forecast_cols), (5, 5, 15));
        let e = reconstruction_error(&f, &h, &y, 26).unwrap();
        assert_eq!(e.max_pct_reconstruction, None);
        assert_eq!(e.reconstruction_cols, 0);
        assert_eq!(e.iterated_cols, 4);
        let e = reconstruction_error(&f, &h, &y, 40).unwrap();
        assert_eq!(e.max_pct_with_iterated, None);
        assert_eq!(e.forecast_cols, 25);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let y = Matrix::from_fn(1, 30, |_, j| (0.4 * j as f64).sin());
        let (h, f) = fitted(&y, 1, 5);
        let (h2, _) = fitted(&y, 1, 3);
        assert!(reconstruct(&f, &h2, 1).is_err());
        assert!(reconstruction_error(&f, &h, &Matrix::zeros(1, 29), 1).is_err());
    }
}
