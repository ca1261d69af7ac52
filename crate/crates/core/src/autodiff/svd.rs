//! Thin SVD forward factorization and its reverse-mode adjoint.

use nalgebra::linalg::SVD;

use super::{Matrix, Result, TensorError};

/// Regularization of the `1/(s_j² − s_i²)` factors in the adjoint.
pub const DEGENERACY_EPS: f64 = 1e-12;

const MAX_SWEEPS: usize = 100_000;

/// Truncated thin SVD `A ≈ U · diag(s) · Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// m x rank, orthonormal columns.
    pub u: Matrix,
    /// Retained singular values, descending.
    pub s: Vec<f64>,
    /// n x rank, orthonormal columns.
    pub w: Matrix,
    pub rank: usize,
    /// Every singular value before truncation, descending.
    pub spectrum: Vec<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, mut c) in us.column_iter_mut().enumerate() {
            c *= self.s[j];
        }
        us * self.w.transpose()
    }

    /// Ratio of the smallest retained to the largest singular value.
    pub fn retained_ratio(&self) -> f64 {
        match (self.s.first(), self.s.last()) {
            (Some(&a), Some(&b)) if a > 0.0 => b / a,
            _ => 0.0,
        }
    }
}

fn raw_svd(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let fail = || TensorError::Convergence {
        rows: a.nrows(),
        cols: a.ncols(),
        max_abs: a.amax(),
        frobenius: a.norm(),
    };
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON * 5.0, MAX_SWEEPS).ok_or_else(fail)?;
    let u = svd.u.ok_or_else(fail)?;
    let w = svd.v_t.ok_or_else(fail)?.transpose();
    Ok((u, svd.singular_values.iter().copied().collect(), w))
}

/// Thin SVD of `a` keeping singular values above `rel_tol · s[0]`.
///
/// Strongly rectangular inputs are first reduced by a QR factorization of
/// the long side, which keeps the iterative part on a small square core.
pub fn svd_factors(a: &Matrix, rel_tol: f64) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(TensorError::Empty { op: "svd" });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(TensorError::NonFinite { op: "svd" });
    }
    let (u, s, w) = if n >= 2 * m {
        // Aᵀ = Q R  =>  A = Rᵀ Qᵀ
        let qr = a.transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let (ur, s, wr) = raw_svd(&r.transpose())?;
        (ur, s, q * wr)
    } else if m >= 2 * n {
        let qr = a.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let (ur, s, wr) = raw_svd(&r)?;
        (q * ur, s, wr)
    } else {
        raw_svd(a)?
    };

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let spectrum: Vec<f64> = order.iter().map(|&i| s[i].max(0.0)).collect();
    let top = spectrum[0];
    let rank = if top > 0.0 {
        spectrum.iter().take_while(|&&x| x > rel_tol * top && x > 0.0).count()
    } else {
        0
    };
    let u = Matrix::from_fn(m, rank, |i, j| u[(i, order[j])]);
    let w = Matrix::from_fn(n, rank, |i, j| w[(i, order[j])]);
    Ok(SvdFactors {
        u,
        s: spectrum[..rank].to_vec(),
        w,
        rank,
        spectrum,
    })
}

/// Adjoint of the thin SVD: given gradients for `U`, `s` and `W`, returns
/// the gradient with respect to `A`. Degenerate gaps use the regularized
/// factor `d / (d² + ε²)`.
pub(crate) fn svd_backward(
    f: &SvdFactors,
    gu: Option<&Matrix>,
    gs: Option<&Matrix>,
    gw: Option<&Matrix>,
) -> Matrix {
    let (m, n) = (f.u.nrows(), f.w.nrows());
    let k = f.rank;
    if k == 0 {
        return Matrix::zeros(m, n);
    }
    let s = &f.s;
    let gap = Matrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            let d = s[j] * s[j] - s[i] * s[i];
            d / (d * d + DEGENERACY_EPS * DEGENERACY_EPS)
        }
    });

    let mut inner = Matrix::zeros(k, k);
    // Components of the incoming gradients orthogonal to the retained spaces.
    let mut left_perp: Option<Matrix> = None;
    let mut right_perp: Option<Matrix> = None;

    if let Some(gu) = gu {
        let utgu = f.u.transpose() * gu;
        let j = gap.component_mul(&(&utgu - utgu.transpose()));
        inner += Matrix::from_fn(k, k, |a, b| j[(a, b)] * s[b]);
        if m > k {
            let mut perp = gu - &f.u * &utgu;
            for (b, mut c) in perp.column_iter_mut().enumerate() {
                c /= s[b];
            }
            left_perp = Some(perp);
        }
    }
    if let Some(gs) = gs {
        for i in 0..k {
            inner[(i, i)] += gs[i];
        }
    }
    if let Some(gw) = gw {
        let wtgw = f.w.transpose() * gw;
        let j = gap.component_mul(&(&wtgw - wtgw.transpose()));
        inner += Matrix::from_fn(k, k, |a, b| s[a] * j[(a, b)]);
        if n > k {
            right_perp = Some(gw - &f.w * &wtgw);
        }
    }

    // U · inner · Wᵀ  +  (I − UUᵀ) Ū S⁻¹ Wᵀ
    let mut left = &f.u * inner;
    if let Some(p) = left_perp {
        left += p;
    }
    let mut ga = left * f.w.transpose();
    // U S⁻¹ W̄ᵀ (I − WWᵀ)
    if let Some(p) = right_perp {
        let mut us = f.u.clone();
        for (b, mut c) in us.column_iter_mut().enumerate() {
            c /= s[b];
        }
        ga += us * p.transpose();
    }
    ga
}
