//! Largest Lyapunov exponent by tangent-vector propagation with periodic
//! renormalization.

use super::dataset::{burned_in_state, step_count};
use super::{DynamicsError, Result, SystemSpec, VectorField};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Integration step used for Lyapunov runs on the named systems.
pub const LYAPUNOV_DT: f64 = 0.01;

/// Joint RK4 step of the state and one tangent vector.
fn tangent_step<F: VectorField + ?Sized>(field: &F, x: &mut [f64], v: &mut [f64], dt: f64) {
    let n = x.len();
    let mut kx = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut kv = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let (mut xt, mut vt) = (x.to_vec(), v.to_vec());
    for stage in 0..4 {
        if stage > 0 {
            let c = if stage == 3 { dt } else { 0.5 * dt };
            for i in 0..n {
                xt[i] = x[i] + c * kx[stage - 1][i];
                vt[i] = v[i] + c * kv[stage - 1][i];
            }
        }
        field.eval(&xt, &mut kx[stage]);
        field.jvp(&xt, &vt, &mut kv[stage]);
    }
    for i in 0..n {
        x[i] += dt / 6.0 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
        v[i] += dt / 6.0 * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest exponent of `field` from `x0` over `horizon`, renormalizing the
/// tangent vector `n_renorm` times at equal intervals.
pub fn largest_lyapunov_field<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    n_renorm: usize,
) -> Result<f64> {
    if n_renorm == 0 {
        return Err(DynamicsError::InvalidArgument("n_renorm must be positive".into()));
    }
    if x0.len() != field.dim() {
        return Err(DynamicsError::InvalidArgument("initial state has the wrong dimension".into()));
    }
    let total = step_count(horizon, dt)?;
    if total < n_renorm {
        return Err(DynamicsError::InvalidArgument(format!(
            "horizon covers {total} steps, fewer than {n_renorm} renormalizations"
        )));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut log_sum = 0.0;
    let mut done = 0;
    for r in 0..n_renorm {
        let end = (total * (r + 1)) / n_renorm;
        for step in done..end {
            tangent_step(field, &mut x, &mut v, dt);
            let xn = norm(&x);
            if !(xn <= 1e8) {
                return Err(DynamicsError::Divergence { step: step + 1, norm: xn });
            }
        }
        done = end;
        let g = norm(&v);
        if !(g > 0.0 && g.is_finite()) {
            return Err(DynamicsError::InvalidArgument(format!("tangent vector norm became {g}")));
        }
        log_sum += g.ln();
        v.iter_mut().for_each(|e| *e /= g);
    }
    Ok(log_sum / (total as f64 * dt))
}

/// Largest exponent of a named system from a burned-in random state.
pub fn largest_lyapunov(spec: &SystemSpec, horizon: f64, n_renorm: usize, seed: u64) -> Result<f64> {
    if !spec.is_ode() {
        return Err(DynamicsError::InvalidArgument("Lyapunov estimation needs an ODE system".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = burned_in_state(spec, LYAPUNOV_DT, &mut rng)?;
    largest_lyapunov_field(spec, &x0, LYAPUNOV_DT, horizon, n_renorm)
}
