//! Kuramoto–Sivashinsky `u_t + u_xx + ν u_xxxx + u u_x = 0` on a
//! `2π`-periodic grid with `ν = (π / L)²`, advanced by ETDRK4 in Fourier
//! space with 2/3-rule dealiasing of the quadratic term.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use super::{DynamicsError, Result, SystemSpec};
use crate::autodiff::Matrix;

const BLOW_UP: f64 = 1e6;
const CONTOUR_POINTS: usize = 64;
const DEFAULT_SUBSTEPS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct KsConfig {
    pub l: f64,
    /// Grid points, equal to the number of Fourier modes.
    pub grid: usize,
    pub dt: f64,
    /// Discarded transient, in time units.
    pub burn_in: f64,
    /// Time between the end of one sample and the start of the next.
    pub gap: f64,
    /// Scale of the random initial Fourier coefficients.
    pub amplitude: f64,
    /// ETDRK4 steps per recorded step of length `dt`.
    pub substeps: usize,
}

impl KsConfig {
    /// `L = 11`, 128 modes, `dt = 0.25`, burn-in `(L/π)⁴`, gap `L/π`.
    pub fn new(l: f64, grid: usize, dt: f64) -> Self {
        Self {
            l,
            grid,
            dt,
            burn_in: (l / PI).powi(4),
            gap: l / PI,
            amplitude: 0.1,
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    pub fn from_spec(spec: &SystemSpec, dt: f64) -> Self {
        Self::new(spec.param("l"), spec.param("grid") as usize, dt)
    }

    pub fn nu(&self) -> f64 {
        (PI / self.l).powi(2)
    }

    /// Steps in one sample of length `(L/π)⁴`, rounded to the grid of `dt`.
    pub fn default_sample_steps(&self) -> usize {
        ((self.l / PI).powi(4) / self.dt).round() as usize
    }

    fn steps_for(&self, span: f64) -> usize {
        (span / self.dt).round() as usize
    }
}

impl Default for KsConfig {
    fn default() -> Self {
        Self::new(11.0, 128, 0.25)
    }
}

/// ETDRK4 stepper holding the Fourier state.
pub struct KsSolver {
    cfg: KsConfig,
    time: f64,
    v: Vec<Complex64>,
    deriv: Vec<Complex64>,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

fn wavenumber(j: usize, n: usize) -> f64 {
    if j < n / 2 {
        j as f64
    } else if j == n / 2 {
        0.0
    } else {
        j as f64 - n as f64
    }
}

impl KsSolver {
    pub fn new(cfg: KsConfig, u0: &[f64]) -> Result<Self> {
        let n = cfg.grid;
        if n < 8 || !n.is_multiple_of(2) {
            return Err(DynamicsError::InvalidArgument(format!("KS grid must be even and >= 8, got {n}")));
        }
        if u0.len() != n || u0.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::InvalidArgument("KS initial field has the wrong size or is not finite".into()));
        }
        if !(cfg.dt > 0.0) || !(cfg.l > 0.0) || cfg.substeps == 0 {
            return Err(DynamicsError::InvalidArgument("KS needs dt > 0, L > 0 and at least one substep".into()));
        }
        let nu = cfg.nu();
        let h = cfg.dt / cfg.substeps as f64;
        let cutoff = n as f64 / 3.0;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);

        let mut e = vec![0.0; n];
        let mut e2 = vec![0.0; n];
        let (mut q, mut f1, mut f2, mut f3) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut deriv = vec![Complex64::new(0.0, 0.0); n];
        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64))
            .collect();
        for j in 0..n {
            let k = wavenumber(j, n);
            let lin = k * k - nu * k.powi(4);
            e[j] = (h * lin).exp();
            e2[j] = (h * lin / 2.0).exp();
            // −½ ∂x(u²) with dealiasing folded in.
            if k.abs() < cutoff {
                deriv[j] = Complex64::new(0.0, -0.5 * k);
            }
            // Contour averages of the φ-functions, which are real for real `lin`.
            let (mut aq, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
            for r in &roots {
                let z = r + h * lin;
                let ez = z.exp();
                let z3 = z * z * z;
                aq += ((((z / 2.0).exp()) - 1.0) / z).re;
                a1 += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3).re;
                a2 += ((2.0 + z + ez * (z - 2.0)) / z3).re;
                a3 += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3).re;
            }
            let m = CONTOUR_POINTS as f64;
            q[j] = h * aq / m;
            f1[j] = h * a1 / m;
            f2[j] = h * a2 / m;
            f3[j] = h * a3 / m;
        }
        let mut v: Vec<Complex64> = u0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        forward.process(&mut v);
        Ok(Self {
            cfg,
            time: 0.0,
            v,
            deriv,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            forward,
            inverse,
            buf: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    /// Mean-free random field with Fourier coefficients decaying like `k⁻²`.
    pub fn random(cfg: KsConfig, seed: u64) -> Result<Self> {
        let n = cfg.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        let kmax = n / 3;
        for k in 1..=kmax {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let c = Complex64::new(a, b) * (cfg.amplitude * n as f64 / (k * k) as f64);
            v[k] = c;
            v[n - k] = c.conj();
        }
        let mut planner = FftPlanner::new();
        planner.plan_fft_inverse(n).process(&mut v);
        let u0: Vec<f64> = v.iter().map(|c| c.re / n as f64).collect();
        Self::new(cfg, &u0)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn config(&self) -> &KsConfig {
        &self.cfg
    }

    /// Physical field on the grid `x_j = 2πj / n`.
    pub fn field(&mut self) -> Vec<f64> {
        let n = self.cfg.grid;
        self.buf.copy_from_slice(&self.v);
        self.inverse.process(&mut self.buf);
        self.buf.iter().map(|c| c.re / n as f64).collect()
    }

    /// Spatial mean, read off the zero mode.
    pub fn mean(&self) -> f64 {
        self.v[0].re / self.cfg.grid as f64
    }

    fn nonlinear(&mut self, v: &[Complex64], out: &mut [Complex64]) {
        let n = self.cfg.grid as f64;
        self.buf.copy_from_slice(v);
        self.inverse.process(&mut self.buf);
        for c in self.buf.iter_mut() {
            let u = c.re / n;
            *c = Complex64::new(u * u, 0.0);
        }
        self.forward.process(&mut self.buf);
        for ((o, d), b) in out.iter_mut().zip(&self.deriv).zip(&self.buf) {
            *o = d * b;
        }
    }

    /// Advance by `dt` through `substeps` ETDRK4 steps.
    pub fn step(&mut self) {
        for _ in 0..self.cfg.substeps {
            self.substep();
        }
        self.time += self.cfg.dt;
    }

    fn substep(&mut self) {
        let n = self.cfg.grid;
        let zero = Complex64::new(0.0, 0.0);
        let (mut nv, mut na, mut nb, mut nc) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
        let (mut a, mut b, mut c) = (vec![zero; n], vec![zero; n], vec![zero; n]);
        let v = self.v.clone();
        self.nonlinear(&v, &mut nv);
        for j in 0..n {
            a[j] = self.e2[j] * v[j] + self.q[j] * nv[j];
        }
        self.nonlinear(&a, &mut na);
        for j in 0..n {
            b[j] = self.e2[j] * v[j] + self.q[j] * na[j];
        }
        self.nonlinear(&b, &mut nb);
        for j in 0..n {
            c[j] = self.e2[j] * a[j] + self.q[j] * (2.0 * nb[j] - nv[j]);
        }
        self.nonlinear(&c, &mut nc);
        for j in 0..n {
            self.v[j] = self.e[j] * v[j]
                + self.f1[j] * nv[j]
                + 2.0 * self.f2[j] * (na[j] + nb[j])
                + self.f3[j] * nc[j];
        }
        // Keep the state the transform of a real field; otherwise roundoff in
        // the imaginary part grows through the unstable modes unchecked.
        self.v[0].im = 0.0;
        self.v[n / 2] = zero;
        for j in 1..n / 2 {
            let avg = (self.v[j] + self.v[n - j].conj()) * 0.5;
            self.v[j] = avg;
            self.v[n - j] = avg.conj();
        }
    }

    /// Step and return the new field, failing on blow-up.
    pub fn advance(&mut self) -> Result<Vec<f64>> {
        self.step();
        let u = self.field();
        let max_abs = if u.iter().all(|x| x.is_finite()) {
            u.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        } else {
            f64::INFINITY
        };
        if max_abs > BLOW_UP {
            return Err(DynamicsError::Stability { time: self.time, max_abs });
        }
        Ok(u)
    }
}

/// Space-time samples (`grid × (sample_steps + 1)` each) from one long run
/// started from a random field: burn-in, then samples separated by gaps.
pub fn ks_generate_steps(cfg: &KsConfig, n_traj: usize, sample_steps: usize, seed: u64) -> Result<Vec<Matrix>> {
    let mut solver = KsSolver::random(cfg.clone(), seed)?;
    for _ in 0..cfg.steps_for(cfg.burn_in) {
        solver.advance()?;
    }
    let gap = cfg.steps_for(cfg.gap);
    let mut out = Vec::with_capacity(n_traj);
    for s in 0..n_traj {
        if s > 0 {
            for _ in 0..gap {
                solver.advance()?;
            }
        }
        let mut m = Matrix::zeros(cfg.grid, sample_steps + 1);
        let u = solver.field();
        m.column_mut(0).copy_from_slice(&u);
        for j in 1..=sample_steps {
            let u = solver.advance()?;
            m.column_mut(j).copy_from_slice(&u);
        }
        out.push(m);
    }
    Ok(out)
}

/// `n_traj` samples of length `(L/π)⁴` on a `n_modes`-point grid.
pub fn ks_generate(l: f64, n_modes: usize, dt: f64, n_traj: usize, seed: u64) -> Result<Vec<Matrix>> {
    let cfg = KsConfig::new(l, n_modes, dt);
    ks_generate_steps(&cfg, n_traj, cfg.default_sample_steps(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(n: usize, k: usize, eps: f64) -> Vec<f64> {
        (0..n).map(|j| eps * (k as f64 * 2.0 * PI * j as f64 / n as f64).cos()).collect()
    }

    #[test]
    fn linear_modes_follow_exact_growth() {
        let cfg = KsConfig::default();
        let nu = cfg.nu();
        for k in [2usize, 4] {
            let mut s = KsSolver::new(cfg.clone(), &cosine(128, k, 1e-9)).unwrap();
            for _ in 0..4 {
                s.step();
            }
            let kf = k as f64;
            let expect = 1e-9 * ((kf * kf - nu * kf.powi(4)) * 1.0).exp();
            let got = s.field()[0];
            assert!((got - expect).abs() <= 1e-6 * expect.abs(), "k={k}: {got} vs {expect}");
        }
    }

    #[test]
    fn mean_is_conserved() {
        let mut s = KsSolver::random(KsConfig::default(), 4).unwrap();
        let m0 = s.mean();
        for _ in 0..400 {
            s.advance().unwrap();
        }
        assert!((s.mean() - m0).abs() < 1e-12);
        let avg: f64 = s.field().iter().sum::<f64>() / 128.0;
        assert!(avg.abs() < 1e-12);
    }

    #[test]
    fn high_order_in_time() {
        let run = |dt: f64| {
            let cfg = KsConfig { dt, substeps: 1, ..KsConfig::default() };
            let mut s = KsSolver::random(cfg, 7).unwrap();
            for _ in 0..(1.0 / dt).round() as usize {
                s.step();
            }
            s.field()
        };
        let (a, b, c) = (run(0.04), run(0.02), run(0.01));
        let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let ratio = d(&a, &b) / d(&b, &c);
        assert!(ratio > 6.0, "convergence ratio {ratio}");
    }

    #[test]
    fn chaotic_regime_stays_bounded() {
        let fields = ks_generate(11.0, 128, 0.25, 2, 1).unwrap();
        assert_eq!(fields.len(), 2);
        assert_eq!(fields[0].shape(), (128, 602));
        let max = fields[1].amax();
        assert!(max > 0.5 && max < 20.0, "max |u| = {max}");
        assert_ne!(fields[0].column(0), fields[1].column(0));
    }

    #[test]
    fn zero_field_stays_zero() {
        let mut s = KsSolver::new(KsConfig::default(), &[0.0; 128]).unwrap();
        for _ in 0..40 {
            assert!(s.advance().unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn single_step_at_recording_interval_is_unstable() {
        let cfg = KsConfig { substeps: 1, ..KsConfig::default() };
        let r = ks_generate_steps(&cfg, 4, cfg.default_sample_steps(), 0);
        assert!(matches!(r, Err(DynamicsError::Stability { .. })));
    }

    #[test]
    fn rejects_bad_grids() {
        let cfg = KsConfig { grid: 7, ..KsConfig::default() };
        assert!(KsSolver::new(cfg, &[0.0; 7]).is_err());
        assert!(KsSolver::new(KsConfig::default(), &[0.0; 12]).is_err());
    }
}
