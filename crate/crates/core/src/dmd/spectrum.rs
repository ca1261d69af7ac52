use std::fmt::Write as _;

use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{DmdError, KoopmanFit, Result};
use crate::autodiff::Matrix;

/// Eigenvector matrices with a larger 2-norm condition number are flagged.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Eigenpairs with a larger relative residual mark the matrix defective.
pub const RESIDUAL_LIMIT: f64 = 1e-8;

const SCHUR_ITERS: usize = 10_000;
const INVERSE_ITERS: usize = 4;

pub type CMatrix = DMatrix<Complex64>;

/// Eigen-decomposition of `K_a` and derived quantities.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Discrete eigenvalues ℓ, by decreasing modulus.
    pub eigenvalues: Vec<Complex64>,
    /// Continuous rates `ln(ℓ) / dt`.
    pub rates: Vec<Complex64>,
    /// Unit eigenvectors as columns, aligned with `eigenvalues`.
    pub eigenvectors: CMatrix,
    /// `‖K v − ℓ v‖ / ‖K‖₂` per pair.
    pub residuals: Vec<f64>,
    /// Koopman modes `K̄_M V`, one column per eigenvalue.
    pub modes: CMatrix,
    pub condition: f64,
    /// Condition above [`CONDITION_LIMIT`], a singular eigenvector matrix,
    /// or a residual above [`RESIDUAL_LIMIT`].
    pub ill_conditioned: bool,
    pub dt: f64,
    inverse: Option<CMatrix>,
}

fn to_complex(m: &Matrix) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

fn cnorm(v: &CMatrix) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn spectral_norm(m: &Matrix) -> f64 {
    m.clone().singular_values().max()
}

/// Normalizes to unit length with the largest entry real and positive.
fn canonical(mut v: CMatrix) -> CMatrix {
    let n = cnorm(&v);
    if n > 0.0 {
        v /= Complex64::new(n, 0.0);
    }
    let big = v.iter().copied().fold(Complex64::new(0.0, 0.0), |a, z| if z.norm() > a.norm() + 1e-12 { z } else { a });
    if big.norm() > 0.0 {
        let phase = big.conj() / big.norm();
        v *= phase;
    }
    v
}

/// Eigenvector for `ell` by shifted inverse iteration, kept orthogonal to
/// the vectors already found for numerically equal eigenvalues.
fn eigenvector(k: &CMatrix, ell: Complex64, scale: f64, cluster: &[CMatrix], seed: usize) -> CMatrix {
    let n = k.nrows();
    let shift = ell + Complex64::new(1e-10, 1e-11) * scale;
    let a = k - CMatrix::identity(n, n) * shift;
    let lu = a.lu();
    let mut v = CMatrix::from_fn(n, 1, |i, _| {
        let t = (i + 1 + 7 * seed) as f64;
        Complex64::new((0.37 * t).sin() + 1.1, (0.91 * t).cos())
    });
    let deflate = |v: &mut CMatrix| {
        for c in cluster {
            let proj = (c.adjoint() * &*v)[(0, 0)];
            *v -= c * proj;
        }
    };
    for _ in 0..INVERSE_ITERS {
        deflate(&mut v);
        v = match lu.solve(&v) {
            Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => x,
            _ => break,
        };
        deflate(&mut v);
        let nv = cnorm(&v);
        if nv == 0.0 || !nv.is_finite() {
            break;
        }
        v /= Complex64::new(nv, 0.0);
    }
    canonical(v)
}

/// Eigenvalues, eigenvectors and Koopman modes of a fit; non-differentiable.
pub fn spectrum(fit: &KoopmanFit, dt: f64) -> Result<SpectrumReport> {
    let k = &fit.k_a;
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(DmdError::Shape(format!("K_a must be square, got {:?}", k.shape())));
    }
    if !(dt > 0.0) {
        return Err(DmdError::Shape(format!("dt must be positive, got {dt}")));
    }
    if k.iter().any(|x| !x.is_finite()) {
        return Err(DmdError::Eigen("K_a is not finite".into()));
    }
    let schur = Schur::try_new(k.clone(), f64::EPSILON, SCHUR_ITERS)
        .ok_or_else(|| DmdError::Eigen("Schur iteration did not converge".into()))?;
    let mut ells: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    ells.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(a.re.total_cmp(&b.re).reverse())
            .then(b.im.total_cmp(&a.im))
    });

    let kc = to_complex(k);
    let norm2 = spectral_norm(k).max(f64::MIN_POSITIVE);
    let mut vecs: Vec<CMatrix> = Vec::with_capacity(n);
    for (i, &ell) in ells.iter().enumerate() {
        let cluster: Vec<CMatrix> = ells[..i]
            .iter()
            .zip(&vecs)
            .filter(|(e, _)| (**e - ell).norm() <= 1e-8 * norm2)
            .map(|(_, v)| v.clone())
            .collect();
        vecs.push(eigenvector(&kc, ell, norm2, &cluster, i));
    }
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| vecs[c][(r, 0)]);
    let residuals: Vec<f64> = ells
        .iter()
        .zip(&vecs)
        .map(|(&ell, v)| cnorm(&(&kc * v - v * ell)) / norm2)
        .collect();
    let sv = eigenvectors.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let inverse = eigenvectors.clone().try_inverse();
    let ill_conditioned = !(condition <= CONDITION_LIMIT)
        || inverse.is_none()
        || residuals.iter().any(|r| !(*r <= RESIDUAL_LIMIT));
    Ok(SpectrumReport {
        rates: ells.iter().map(|e| e.ln() / dt).collect(),
        modes: to_complex(&fit.k_m_bar) * &eigenvectors,
        eigenvalues: ells,
        eigenvectors,
        residuals,
        condition,
        ill_conditioned,
        dt,
        inverse,
    })
}

impl SpectrumReport {
    /// Eigenfunction samples `V⁻¹ Ψ`; row `l` evolves by `ℓ_l` per step.
    pub fn eigenfunctions(&self, psi: &Matrix) -> Result<CMatrix> {
        let inv = self
            .inverse
            .as_ref()
            .ok_or_else(|| DmdError::Eigen("eigenvector matrix is singular".into()))?;
        if psi.nrows() != inv.ncols() {
            return Err(DmdError::Shape(format!(
                "observables have {} rows, spectrum has {}",
                psi.nrows(),
                inv.ncols()
            )));
        }
        Ok(inv * to_complex(psi))
    }

    /// `re_ell,im_ell,re_lambda,im_lambda` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re_ell,im_ell,re_lambda,im_lambda\n");
        for (e, r) in self.eigenvalues.iter().zip(&self.rates) {
            let _ = writeln!(out, "{:e},{:e},{:e},{:e}", e.re, e.im, r.re, r.im);
        }
        out
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmd::{build_hankel, fit_global, shifted_snapshots, FitScope};
    use proptest::prelude::*;

    fn fit_of(k: Matrix) -> KoopmanFit {
        let n = k.nrows();
        KoopmanFit {
            k_m_bar: Matrix::identity(n, n),
            k_a: k,
            svd_rank: n,
            scope: FitScope::Global,
            n_ob_bar: 1,
            retained_ratio: 1.0,
        }
    }

    #[test]
    fn scalar_decay() {
        let s = spectrum(&fit_of(Matrix::from_element(1, 1, 0.9)), 0.05).unwrap();
        assert!((s.eigenvalues[0] - Complex64::new(0.9, 0.0)).norm() < 1e-14);
        assert!((s.rates[0].re - 0.9f64.ln() / 0.05).abs() < 1e-12);
        assert!((s.rates[0].re + 2.107).abs() < 1e-3);
    }

    #[test]
    fn rotation_on_unit_circle() {
        let t: f64 = 0.1;
        let r = Matrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let s = spectrum(&fit_of(r), 1.0).unwrap();
        let want = [Complex64::from_polar(1.0, t), Complex64::from_polar(1.0, -t)];
        for w in want {
            assert!(s.eigenvalues.iter().any(|e| (e - w).norm() < 1e-10));
        }
        assert!(s.max_residual() < 1e-10);
        assert!(!s.ill_conditioned);
    }

    #[test]
    fn eigenfunctions_evolve_by_eigenvalues() {
        let a = Matrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.2, 0.9, 0.1, 0.0, -0.1, 0.95]);
        let mut y = Matrix::zeros(3, 2 * 30);
        for (k, x0) in [[1.0, 0.0, 0.2], [0.1, 1.0, -0.5]].iter().enumerate() {
            let mut x = nalgebra::DVector::from_column_slice(x0);
            for t in 0..30 {
                y.column_mut(k * 30 + t).copy_from(&x);
                x = &a * x;
            }
        }
        let h = build_hankel(&y, 2, 1).unwrap();
        let f = fit_global(&h, &shifted_snapshots(&y, &h.layout, 0, 29), 1e-10).unwrap();
        let s = spectrum(&f, 0.05).unwrap();
        let pm = s.eigenfunctions(&h.psi_minus).unwrap();
        let pp = s.eigenfunctions(&h.psi_plus).unwrap();
        let mut rel: Vec<f64> = Vec::new();
        for l in 0..3 {
            for j in 0..pm.ncols() {
                let pred = pm[(l, j)] * s.eigenvalues[l];
                rel.push((pp[(l, j)] - pred).norm() / pp[(l, j)].norm().max(1e-300));
            }
        }
        rel.sort_by(f64::total_cmp);
        assert!(rel[rel.len() / 2] < 1e-6, "median {}", rel[rel.len() / 2]);
        // modes reproduce the snapshots: K̄_M V Φ = K̄_M Ψ
        let back = &s.modes * &pm;
        assert!(back.iter().zip(h.psi_minus.iter()).all(|(z, x)| (z.re - x).abs() < 1e-8 && z.im.abs() < 1e-8));
    }

    #[test]
    fn defective_matrix_is_flagged() {
        let j = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let s = spectrum(&fit_of(j), 1.0).unwrap();
        assert!(s.ill_conditioned);
    }

    #[test]
    fn repeated_eigenvalues_get_independent_vectors() {
        let s = spectrum(&fit_of(Matrix::identity(3, 3) * 0.5), 1.0).unwrap();
        assert!(!s.ill_conditioned, "condition {}", s.condition);
        assert!(s.max_residual() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let s = spectrum(&fit_of(Matrix::from_element(1, 1, 0.5)), 0.1).unwrap();
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "re_ell,im_ell,re_lambda,im_lambda");
        let f: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[0], 0.5);
        assert!((f[2] - 0.5f64.ln() / 0.1).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn eigenpair_residuals_are_small(n in 1usize..12, seed in any::<u64>()) {
            let mut s = seed;
            let k = Matrix::from_fn(n, n, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            });
            let rep = spectrum(&fit_of(k), 1.0).unwrap();
            prop_assert_eq!(rep.eigenvalues.len(), n);
            prop_assert!(!rep.ill_conditioned, "condition {} residual {}", rep.condition, rep.max_residual());
            prop_assert!(rep.max_residual() <= 1e-8);
        }
    }
}
