use super::{DmdError, Result};
use crate::autodiff::Matrix;

/// Index bookkeeping for delay embedding of a trajectory-major batch.
///
/// The source is `n_dim × (n_batch · steps)` with trajectory `k` in columns
/// `k·steps .. (k+1)·steps`. Row `d·n_ob_bar + l` of the Hankel matrix holds
/// dimension `d` delayed by `l` steps; window position `w` of trajectory `k`
/// is column `k·(n_w − 1) + w` of Ψ₋ and `k·(n_w − 1) + w − 1` of Ψ₊.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelLayout {
    pub n_dim: usize,
    /// Samples per trajectory, `N_T + 1`.
    pub steps: usize,
    pub n_batch: usize,
    pub n_ob_bar: usize,
    pub n_w: usize,
}

impl HankelLayout {
    pub fn new(n_dim: usize, steps: usize, n_batch: usize, n_ob_bar: usize) -> Result<Self> {
        if n_dim == 0 || n_batch == 0 || steps < 2 {
            return Err(DmdError::Shape(format!(
                "need at least one dimension, one trajectory and two samples (got {n_dim}, {n_batch}, {steps})"
            )));
        }
        // N_w = N_T + 1 − (N̄_ob − 1) ≥ 2.
        let max = steps - 1;
        if n_ob_bar == 0 || n_ob_bar > max {
            return Err(DmdError::DelayOutOfRange { n_ob_bar, max });
        }
        Ok(Self {
            n_dim,
            steps,
            n_batch,
            n_ob_bar,
            n_w: steps + 1 - n_ob_bar,
        })
    }

    pub fn n_ob(&self) -> usize {
        self.n_dim * self.n_ob_bar
    }

    /// Columns of Ψ₋ (and Ψ₊) per trajectory.
    pub fn cols_per_traj(&self) -> usize {
        self.n_w - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_batch * self.cols_per_traj()
    }

    fn source_index(&self, d: usize, k: usize, t: usize) -> usize {
        (k * self.steps + t) * self.n_dim + d
    }

    fn index(&self, shift: usize) -> Vec<usize> {
        let (rows, per) = (self.n_ob(), self.cols_per_traj());
        let mut idx = Vec::with_capacity(rows * self.n_cols());
        for k in 0..self.n_batch {
            for w in 0..per {
                for d in 0..self.n_dim {
                    for l in 0..self.n_ob_bar {
                        idx.push(self.source_index(d, k, w + l + shift));
                    }
                }
            }
        }
        idx
    }

    /// Column-major gather indices for Ψ₋ into the source matrix.
    pub fn minus_index(&self) -> Vec<usize> {
        self.index(0)
    }

    pub fn plus_index(&self) -> Vec<usize> {
        self.index(1)
    }

    /// Gather indices for the snapshots at the window start times, an
    /// `n_dim × n_cols` matrix aligned with the columns of Ψ₋.
    pub fn start_index(&self) -> Vec<usize> {
        self.shifted_index(0, self.cols_per_traj())
    }

    /// Snapshots `shift` steps after window starts `0..count` of every
    /// trajectory, trajectory-major. Panics if a target falls past the end.
    pub fn shifted_index(&self, shift: usize, count: usize) -> Vec<usize> {
        assert!(count == 0 || count - 1 + shift < self.steps, "shifted target beyond trajectory end");
        let mut idx = Vec::with_capacity(self.n_dim * self.n_batch * count);
        for k in 0..self.n_batch {
            for w in 0..count {
                for d in 0..self.n_dim {
                    idx.push(self.source_index(d, k, w + shift));
                }
            }
        }
        idx
    }

    pub fn check_source(&self, m: &Matrix) -> Result<()> {
        let want = (self.n_dim, self.n_batch * self.steps);
        if m.shape() != want {
            return Err(DmdError::Shape(format!(
                "source is {:?}, layout expects {want:?}",
                m.shape()
            )));
        }
        Ok(())
    }
}

/// Delay-embedded observables of a trajectory batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelStack {
    pub psi_minus: Matrix,
    pub psi_plus: Matrix,
    pub layout: HankelLayout,
}

impl HankelStack {
    pub fn n_ob_bar(&self) -> usize {
        self.layout.n_ob_bar
    }

    pub fn n_w(&self) -> usize {
        self.layout.n_w
    }

    pub fn n_dim(&self) -> usize {
        self.layout.n_dim
    }
}

fn gather(src: &Matrix, rows: usize, cols: usize, idx: &[usize]) -> Matrix {
    let data = src.as_slice();
    Matrix::from_iterator(rows, cols, idx.iter().map(|&i| data[i]))
}

/// Hankel observables of `values`, an `n_dim × (n_batch · steps)`
/// trajectory-major batch.
pub fn build_hankel(values: &Matrix, n_batch: usize, n_ob_bar: usize) -> Result<HankelStack> {
    if n_batch == 0 || !values.ncols().is_multiple_of(n_batch) {
        return Err(DmdError::Shape(format!(
            "{} columns do not split into {n_batch} trajectories",
            values.ncols()
        )));
    }
    let layout = HankelLayout::new(values.nrows(), values.ncols() / n_batch, n_batch, n_ob_bar)?;
    Ok(HankelStack {
        psi_minus: gather(values, layout.n_ob(), layout.n_cols(), &layout.minus_index()),
        psi_plus: gather(values, layout.n_ob(), layout.n_cols(), &layout.plus_index()),
        layout,
    })
}

/// Snapshots `shift` steps after window starts `0..count`.
pub fn shifted_snapshots(values: &Matrix, layout: &HankelLayout, shift: usize, count: usize) -> Matrix {
    gather(values, layout.n_dim, layout.n_batch * count, &layout.shifted_index(shift, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_example() {
        let y = Matrix::from_row_slice(1, 5, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let h = build_hankel(&y, 1, 3).unwrap();
        assert_eq!(h.n_w(), 3);
        assert_eq!(h.psi_minus, Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0]));
        assert_eq!(h.psi_plus, Matrix::from_row_slice(3, 2, &[2.0, 3.0, 3.0, 4.0, 4.0, 5.0]));
    }

    #[test]
    fn single_delay_is_plain_snapshots() {
        let y = Matrix::from_fn(2, 12, |i, j| (i * 12 + j) as f64);
        let h = build_hankel(&y, 2, 1).unwrap();
        assert_eq!(h.n_w(), 6);
        let expect_minus = Matrix::from_fn(2, 10, |i, c| y[(i, (c / 5) * 6 + c % 5)]);
        let expect_plus = Matrix::from_fn(2, 10, |i, c| y[(i, (c / 5) * 6 + c % 5 + 1)]);
        assert_eq!(h.psi_minus, expect_minus);
        assert_eq!(h.psi_plus, expect_plus);
    }

    #[test]
    fn rows_are_dimension_major() {
        // dimension 0 carries 0..10, dimension 1 carries 100..110
        let y = Matrix::from_fn(2, 10, |i, j| (100 * i + j) as f64);
        let h = build_hankel(&y, 1, 3).unwrap();
        assert_eq!(h.psi_minus.column(0).as_slice(), &[0.0, 1.0, 2.0, 100.0, 101.0, 102.0]);
    }

    #[test]
    fn delay_range_is_checked() {
        let y = Matrix::zeros(1, 5);
        assert!(matches!(build_hankel(&y, 1, 0), Err(DmdError::DelayOutOfRange { .. })));
        assert!(matches!(build_hankel(&y, 1, 5), Err(DmdError::DelayOutOfRange { max: 4, .. })));
        assert!(build_hankel(&y, 1, 4).is_ok());
        assert!(build_hankel(&Matrix::zeros(1, 7), 2, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn shift_property_and_sizes(
            n_dim in 1usize..4,
            steps in 3usize..15,
            n_batch in 1usize..4,
            frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let n_ob_bar = 1 + ((steps - 2) as f64 * frac) as usize;
            let mut s = seed;
            let y = Matrix::from_fn(n_dim, n_batch * steps, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            });
            let h = build_hankel(&y, n_batch, n_ob_bar).unwrap();
            let per = steps + 1 - n_ob_bar - 1;
            prop_assert_eq!(h.n_w(), steps + 1 - n_ob_bar);
            prop_assert_eq!(h.psi_minus.shape(), (n_dim * n_ob_bar, n_batch * per));
            for k in 0..n_batch {
                for j in 0..per.saturating_sub(1) {
                    prop_assert_eq!(h.psi_plus.column(k * per + j), h.psi_minus.column(k * per + j + 1));
                }
                // direct index oracle
                for j in 0..per {
                    for d in 0..n_dim {
                        for l in 0..n_ob_bar {
                            prop_assert_eq!(h.psi_minus[(d * n_ob_bar + l, k * per + j)], y[(d, k * steps + j + l)]);
                        }
                    }
                }
            }
        }
    }
}
