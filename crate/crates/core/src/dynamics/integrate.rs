use super::{dataset::Trajectory, DynamicsError, Result, SystemSpec, VectorField};
use crate::autodiff::Matrix;

const DIVERGENCE_NORM: f64 = 1e8;

/// One classical fourth-order Runge–Kutta step, in place.
pub fn rk4_step<F: VectorField + ?Sized>(field: &F, x: &mut [f64], dt: f64, scratch: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = scratch;
    field.eval(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    field.eval(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    field.eval(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    field.eval(tmp, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

pub(crate) fn scratch(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

/// Fixed-step RK4 trajectory of any vector field; `n_steps + 1` samples.
pub fn rk4_field<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if x0.len() != field.dim() {
        return Err(DynamicsError::InvalidArgument(format!(
            "initial state has {} entries, system has {}",
            x0.len(),
            field.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::InvalidArgument("initial state is not finite".into()));
    }
    let n = x0.len();
    let mut values = Matrix::zeros(n, n_steps + 1);
    values.column_mut(0).copy_from_slice(x0);
    let mut x = x0.to_vec();
    let mut s = scratch(n);
    for step in 1..=n_steps {
        rk4_step(field, &mut x, dt, &mut s);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(DynamicsError::Divergence { step, norm });
        }
        values.column_mut(step).copy_from_slice(&x);
    }
    Ok(Trajectory { values, dt, t0: 0.0 })
}

/// RK4 trajectory of one of the named ODE systems.
pub fn rk4_integrate(spec: &SystemSpec, x0: &[f64], dt: f64, n_steps: usize) -> Result<Trajectory> {
    if !spec.is_ode() {
        return Err(DynamicsError::InvalidArgument(
            "rk4_integrate needs an ODE system; use ks_generate for KS".into(),
        ));
    }
    rk4_field(spec, x0, dt, n_steps)
}
