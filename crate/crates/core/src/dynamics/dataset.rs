use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::integrate::{rk4_step, scratch};
use super::{ks, pod_reduce, rk4_field, DynamicsError, Result, SystemSpec};
use crate::autodiff::Matrix;

const MAX_RESAMPLES: usize = 16;

/// One trajectory: `values` is `N_s × (N_T + 1)`, column `j` at `t0 + j·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub values: Matrix,
    pub dt: f64,
    pub t0: f64,
}

impl Trajectory {
    pub fn state_dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of recorded samples, `N_T + 1`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// A family of trajectories sharing state dimension, length and step.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub dt: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, dt: f64, seed: u64) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| DynamicsError::InvalidArgument("dataset needs at least one trajectory".into()))?;
        let shape = first.values.shape();
        if shape.0 == 0 || shape.1 < 2 {
            return Err(DynamicsError::InvalidArgument(format!(
                "trajectories must have a state and at least two samples, got {shape:?}"
            )));
        }
        for (i, t) in trajectories.iter().enumerate() {
            if t.values.shape() != shape {
                return Err(DynamicsError::InvalidArgument(format!(
                    "trajectory {i} has shape {:?}, expected {shape:?}",
                    t.values.shape()
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::InvalidArgument(format!("trajectory {i} is not finite")));
            }
        }
        Ok(Self { trajectories, dt, seed })
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].values.nrows()
    }

    /// Samples per trajectory, `N_T + 1`.
    pub fn steps(&self) -> usize {
        self.trajectories[0].values.ncols()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Trajectory-major concatenation of the selected trajectories.
    pub fn stacked(&self, indices: &[usize]) -> Matrix {
        let (n, t) = (self.state_dim(), self.steps());
        let mut out = Matrix::zeros(n, indices.len() * t);
        for (k, &i) in indices.iter().enumerate() {
            out.columns_mut(k * t, t).copy_from(&self.trajectories[i].values);
        }
        out
    }

    pub fn stacked_all(&self) -> Matrix {
        self.stacked(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
            dt: self.dt,
            seed: self.seed,
        }
    }

    /// First `n` trajectories and the rest.
    pub fn split(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        (
            self.subset(&(0..n).collect::<Vec<_>>()),
            self.subset(&(n..self.len()).collect::<Vec<_>>()),
        )
    }
}

pub(crate) fn step_count(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() || !(span >= 0.0) || !span.is_finite() {
        return Err(DynamicsError::InvalidArgument(format!(
            "need dt > 0 and a non-negative time span, got dt = {dt}, span = {span}"
        )));
    }
    let ratio = span / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(DynamicsError::InvalidArgument(format!(
            "time span {span} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

/// Random initial state drawn from the system's sampling box, pushed
/// through the burn-in with the same step. Divergent draws are resampled
/// from the same stream a bounded number of times.
pub(crate) fn burned_in_state(spec: &SystemSpec, dt: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let (bounds, burn_in) = spec.sampling_box();
    let burn_steps = (burn_in / dt).ceil() as usize;
    let mut s = scratch(spec.state_dim);
    let mut last_err = None;
    for _ in 0..MAX_RESAMPLES {
        let mut x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
        let mut ok = true;
        for step in 1..=burn_steps {
            rk4_step(spec, &mut x, dt, &mut s);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= 1e8) {
                last_err = Some(DynamicsError::Divergence { step, norm });
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(x);
        }
    }
    Err(last_err.unwrap_or_else(|| DynamicsError::InvalidArgument("no admissible initial state".into())))
}

fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n_traj` trajectories of length `t_f / dt + 1`.
///
/// For ODE systems each trajectory owns the random stream `(seed, index)`,
/// so the result does not depend on thread count. For KS, `dt` is the
/// solver step, `t_f` the length of each sample, and each sample is
/// reduced to `spec.state_dim` POD time coefficients.
pub fn sample_dataset(spec: &SystemSpec, n_traj: usize, t_f: f64, dt: f64, seed: u64) -> Result<Dataset> {
    if n_traj == 0 {
        return Err(DynamicsError::InvalidArgument("n_traj must be positive".into()));
    }
    let n_steps = step_count(t_f, dt)?;
    if n_steps == 0 {
        return Err(DynamicsError::InvalidArgument("t_f must cover at least one step".into()));
    }
    if !spec.is_ode() {
        let cfg = ks::KsConfig::from_spec(spec, dt);
        let fields = ks::ks_generate_steps(&cfg, n_traj, n_steps, seed)?;
        let trajectories = fields
            .iter()
            .map(|f| {
                let pod = pod_reduce(f, spec.state_dim)?;
                Ok(Trajectory { values: pod.time_modes, dt, t0: 0.0 })
            })
            .collect::<Result<Vec<_>>>()?;
        return Dataset::new(trajectories, dt, seed);
    }

    let one = |i: usize| -> Result<Trajectory> {
        let mut rng = trajectory_rng(seed, i);
        let x0 = burned_in_state(spec, dt, &mut rng)?;
        rk4_field(spec, &x0, dt, n_steps)
    };
    #[cfg(feature = "parallel")]
    let trajectories = {
        use rayon::prelude::*;
        (0..n_traj).into_par_iter().map(one).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let trajectories = (0..n_traj).map(one).collect::<Result<Vec<_>>>()?;
    Dataset::new(trajectories, dt, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_finiteness() {
        let d = sample_dataset(&SystemSpec::lorenz63(), 4, 2.0, 0.05, 1).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.state_dim(), 3);
        assert_eq!(d.steps(), 41);
        assert!(d.trajectories.iter().all(|t| t.values.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn same_seed_same_data() {
        let a = sample_dataset(&SystemSpec::vanderpol(), 3, 1.0, 0.05, 9).unwrap();
        let b = sample_dataset(&SystemSpec::vanderpol(), 3, 1.0, 0.05, 9).unwrap();
        let c = sample_dataset(&SystemSpec::vanderpol(), 3, 1.0, 0.05, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_is_stable_under_count() {
        let a = sample_dataset(&SystemSpec::rossler(), 2, 1.0, 0.05, 3).unwrap();
        let b = sample_dataset(&SystemSpec::rossler(), 5, 1.0, 0.05, 3).unwrap();
        assert_eq!(a.trajectories[..], b.trajectories[..2]);
    }

    #[test]
    fn rejects_non_integer_horizon() {
        assert!(sample_dataset(&SystemSpec::lorenz63(), 1, 1.03, 0.05, 0).is_err());
        assert!(sample_dataset(&SystemSpec::lorenz63(), 0, 1.0, 0.05, 0).is_err());
    }

    #[test]
    fn stacking_is_trajectory_major() {
        let d = sample_dataset(&SystemSpec::vanderpol(), 3, 0.5, 0.05, 2).unwrap();
        let s = d.stacked(&[2, 0]);
        assert_eq!(s.ncols(), 22);
        assert_eq!(s.column(0), d.trajectories[2].values.column(0));
        assert_eq!(s.column(11), d.trajectories[0].values.column(0));
        let (tr, te) = d.split(2);
        assert_eq!((tr.len(), te.len()), (2, 1));
    }

    #[test]
    fn mismatched_trajectories_rejected() {
        let a = Trajectory { values: Matrix::zeros(2, 5), dt: 0.1, t0: 0.0 };
        let b = Trajectory { values: Matrix::zeros(2, 6), dt: 0.1, t0: 0.0 };
        assert!(Dataset::new(vec![a, b], 0.1, 0).is_err());
    }
}
