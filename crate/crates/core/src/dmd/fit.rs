use super::{hankel::HankelLayout, DmdError, HankelStack, Result};
use crate::autodiff::{Matrix, SvdFactors, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitScope {
    Global,
    Local,
}

/// Koopman matrices fitted on delay-embedded observables.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanFit {
    /// `N_ob × N_ob` one-step operator on the observables.
    pub k_a: Matrix,
    /// `n_dim × N_ob` map from observables back to snapshots.
    pub k_m_bar: Matrix,
    pub svd_rank: usize,
    pub scope: FitScope,
    pub n_ob_bar: usize,
    /// Smallest retained over largest singular value of Ψ₋.
    pub retained_ratio: f64,
}

/// Handles to the fitted quantities on a tape.
#[derive(Debug, Clone)]
pub struct TapeFit {
    pub psi_minus: Var,
    pub psi_plus: Var,
    pub k_a: Var,
    pub k_m_bar: Var,
    pub factors: SvdFactors,
}

fn check_variation(psi_minus: &Matrix) -> Result<()> {
    if psi_minus.iter().all(|&x| x == 0.0) {
        return Err(DmdError::Degenerate("observable matrix is identically zero".into()));
    }
    let first = psi_minus.column(0);
    let scale = psi_minus.amax();
    let flat = psi_minus
        .column_iter()
        .all(|c| (c - first).amax() <= 1e-14 * scale);
    if flat {
        return Err(DmdError::Degenerate("observables do not vary over time".into()));
    }
    Ok(())
}

/// `K_a = Ψ₊ W Σ⁻¹ Uᵀ` and `K̄_M = Ỹ W Σ⁻¹ Uᵀ` from one truncated SVD of Ψ₋.
fn fit_core(
    tape: &mut Tape,
    psi_minus: Var,
    psi_plus: Var,
    starts: Var,
    rel_tol: f64,
) -> Result<(Var, Var, SvdFactors)> {
    check_variation(tape.value(psi_minus))?;
    let (u, s, w, factors) = tape.svd(psi_minus, rel_tol)?;
    if factors.rank == 0 {
        return Err(DmdError::Degenerate("observable matrix has rank zero".into()));
    }
    let s_inv = tape.reciprocal(s)?;
    let ws = tape.scale_cols(w, s_inv)?;
    let ut = tape.transpose(u)?;
    let pw = tape.matmul(psi_plus, ws)?;
    let k_a = tape.matmul(pw, ut)?;
    let yw = tape.matmul(starts, ws)?;
    let k_m_bar = tape.matmul(yw, ut)?;
    Ok((k_a, k_m_bar, factors))
}

/// Differentiable fit on the delay embedding of `source`, an
/// `n_dim × (n_batch · steps)` trajectory-major batch already on `tape`.
/// `K̄_M` maps each Ψ₋ column to the snapshot at its window start.
pub fn fit_on_tape(tape: &mut Tape, source: Var, layout: &HankelLayout, rel_tol: f64) -> Result<TapeFit> {
    layout.check_source(tape.value(source))?;
    let (n_ob, cols) = (layout.n_ob(), layout.n_cols());
    let psi_minus = tape.gather(source, n_ob, cols, layout.minus_index())?;
    let psi_plus = tape.gather(source, n_ob, cols, layout.plus_index())?;
    let starts = tape.gather(source, layout.n_dim, cols, layout.start_index())?;
    let (k_a, k_m_bar, factors) = fit_core(tape, psi_minus, psi_plus, starts, rel_tol)?;
    Ok(TapeFit {
        psi_minus,
        psi_plus,
        k_a,
        k_m_bar,
        factors,
    })
}

fn fit_values(stack: &HankelStack, latent: &Matrix, rel_tol: f64, scope: FitScope) -> Result<KoopmanFit> {
    let l = &stack.layout;
    if latent.ncols() != l.n_cols() || latent.nrows() == 0 {
        return Err(DmdError::Shape(format!(
            "latent snapshots are {:?}, expected (_, {})",
            latent.shape(),
            l.n_cols()
        )));
    }
    let mut tape = Tape::new();
    let pm = tape.constant(stack.psi_minus.clone())?;
    let pp = tape.constant(stack.psi_plus.clone())?;
    let y = tape.constant(latent.clone())?;
    let (k_a, k_m_bar, factors) = fit_core(&mut tape, pm, pp, y, rel_tol)?;
    Ok(KoopmanFit {
        k_a: tape.value(k_a).clone(),
        k_m_bar: tape.value(k_m_bar).clone(),
        svd_rank: factors.rank,
        scope,
        n_ob_bar: l.n_ob_bar,
        retained_ratio: factors.retained_ratio(),
    })
}

/// One Koopman fit across every trajectory of the stack. `latent` holds
/// the snapshots at the window start times, aligned with Ψ₋.
pub fn fit_global(stack: &HankelStack, latent: &Matrix, rel_tol: f64) -> Result<KoopmanFit> {
    fit_values(stack, latent, rel_tol, FitScope::Global)
}

/// Fit on a single trajectory.
pub fn fit_local(stack: &HankelStack, latent: &Matrix, rel_tol: f64) -> Result<KoopmanFit> {
    if stack.layout.n_batch != 1 {
        return Err(DmdError::Shape(format!(
            "local fit takes one trajectory, got {}",
            stack.layout.n_batch
        )));
    }
    fit_values(stack, latent, rel_tol, FitScope::Local)
}

#[cfg(test)]
mod tests {
    use super::super::{build_hankel, shifted_snapshots};
    use super::*;
    use crate::autodiff::DIAGNOSTIC_REL_TOL;

    fn linear_batch(a: &Matrix, x0s: &[Vec<f64>], steps: usize) -> Matrix {
        let n = a.nrows();
        let mut out = Matrix::zeros(n, x0s.len() * steps);
        for (k, x0) in x0s.iter().enumerate() {
            let mut x = nalgebra::DVector::from_column_slice(x0);
            for t in 0..steps {
                out.column_mut(k * steps + t).copy_from(&x);
                x = a * x;
            }
        }
        out
    }

    fn starts(values: &Matrix, stack: &HankelStack) -> Matrix {
        shifted_snapshots(values, &stack.layout, 0, stack.layout.cols_per_traj())
    }

    #[test]
    fn scalar_doubling() {
        let y = Matrix::from_row_slice(1, 6, &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        let h = build_hankel(&y, 1, 1).unwrap();
        let f = fit_global(&h, &starts(&y, &h), DIAGNOSTIC_REL_TOL).unwrap();
        assert!((f.k_a[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_linear_map_against_normal_equations() {
        let a = Matrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.1, 0.8, 0.3, 0.05, 0.0, 0.7]);
        let x0s = vec![vec![1.0, 0.0, 0.5], vec![-0.3, 1.2, 0.1], vec![0.2, -0.7, 1.0]];
        let y = linear_batch(&a, &x0s, 12);
        let h = build_hankel(&y, 3, 1).unwrap();
        let f = fit_global(&h, &starts(&y, &h), DIAGNOSTIC_REL_TOL).unwrap();
        // oracle: K = Ψ₊ Ψ₋ᵀ (Ψ₋ Ψ₋ᵀ)⁻¹
        let g = &h.psi_minus * h.psi_minus.transpose();
        let oracle = &h.psi_plus * h.psi_minus.transpose() * g.try_inverse().unwrap();
        assert!((&f.k_a - &oracle).amax() < 1e-10);
        assert!((&f.k_a - &a).amax() < 1e-10);
        assert_eq!(f.scope, FitScope::Global);
    }

    #[test]
    fn snapshot_map_selects_state_rows() {
        let a = Matrix::from_row_slice(2, 2, &[0.95, 0.1, -0.1, 0.95]);
        let y = linear_batch(&a, &[vec![1.0, 0.0], vec![0.3, -0.4]], 15);
        let h = build_hankel(&y, 2, 1).unwrap();
        let s = starts(&y, &h);
        let f = fit_global(&h, &s, DIAGNOSTIC_REL_TOL).unwrap();
        let resid = (&f.k_m_bar * &h.psi_minus - &s).norm() / s.norm();
        assert!(resid < 1e-10);
    }

    #[test]
    fn single_trajectory_global_equals_local() {
        let t = Matrix::from_fn(2, 40, |i, j| ((j as f64) * 0.3 + i as f64).sin() * (1.0 + 0.01 * j as f64));
        let h = build_hankel(&t, 1, 4).unwrap();
        let s = starts(&t, &h);
        let g = fit_global(&h, &s, DIAGNOSTIC_REL_TOL).unwrap();
        let l = fit_local(&h, &s, DIAGNOSTIC_REL_TOL).unwrap();
        assert_eq!(g.k_a, l.k_a);
        assert_eq!(g.k_m_bar, l.k_m_bar);
        assert_eq!(l.scope, FitScope::Local);
    }

    #[test]
    fn degenerate_data_is_rejected() {
        let z = Matrix::zeros(2, 10);
        let h = build_hankel(&z, 1, 2).unwrap();
        assert!(matches!(fit_global(&h, &starts(&z, &h), 1e-10), Err(DmdError::Degenerate(_))));
        let c = Matrix::from_element(2, 10, 3.0);
        let h = build_hankel(&c, 1, 2).unwrap();
        assert!(matches!(fit_local(&h, &starts(&c, &h), 1e-10), Err(DmdError::Degenerate(_))));
        let two = Matrix::from_fn(1, 20, |_, j| j as f64);
        let h = build_hankel(&two, 2, 1).unwrap();
        assert!(fit_local(&h, &starts(&two, &h), 1e-10).is_err());
    }

    #[test]
    fn tape_fit_matches_value_fit() {
        let t = Matrix::from_fn(2, 60, |i, j| ((j % 30) as f64 * 0.2 + i as f64).cos() * (1.0 + (j / 30) as f64));
        let h = build_hankel(&t, 2, 3).unwrap();
        let f = fit_global(&h, &starts(&t, &h), 1e-8).unwrap();
        let mut tape = Tape::new();
        let src = tape.constant(t.clone()).unwrap();
        let tf = fit_on_tape(&mut tape, src, &h.layout, 1e-8).unwrap();
        assert_eq!(tape.value(tf.k_a), &f.k_a);
        assert_eq!(tape.value(tf.k_m_bar), &f.k_m_bar);
        assert_eq!(tape.value(tf.psi_minus), &h.psi_minus);
    }
}
