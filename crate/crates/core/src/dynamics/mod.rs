//! Trajectory data: ODE right-hand sides, fixed-step integration, dataset
//! sampling, the Kuramoto–Sivashinsky pipeline and a Lyapunov diagnostic.

mod dataset;
mod integrate;
pub mod ks;
mod lyapunov;
mod pod;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use dataset::{sample_dataset, Dataset, Trajectory};
pub use integrate::{rk4_field, rk4_integrate, rk4_step};
pub use lyapunov::{largest_lyapunov, largest_lyapunov_field};
pub use pod::{pod_reduce, PodReduction, POD_RATIO_BAND};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("trajectory diverged at step {step} (|x| = {norm:e})")]
    Divergence { step: usize, norm: f64 },
    #[error("Kuramoto-Sivashinsky solution blew up at t = {time} (max |u| = {max_abs:e}); try a smaller dt")]
    Stability { time: f64, max_abs: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("requested {requested} POD modes but the field has rank {rank}")]
    PodRank { requested: usize, rank: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// An autonomous vector field `ẋ = f(x)` with its tangent map.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// Jacobian-vector product `J(x) · v`.
    fn jvp(&self, x: &[f64], v: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemKind {
    VanDerPol,
    Lorenz63,
    Rossler,
    Lorenz96,
    Ks,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::VanDerPol,
        SystemKind::Lorenz63,
        SystemKind::Rossler,
        SystemKind::Lorenz96,
        SystemKind::Ks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::VanDerPol => "vanderpol",
            SystemKind::Lorenz63 => "lorenz63",
            SystemKind::Rossler => "rossler",
            SystemKind::Lorenz96 => "lorenz96",
            SystemKind::Ks => "ks",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| DynamicsError::InvalidArgument(format!("unknown system '{s}'")))
    }
}

/// A dynamical system with named real parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub params: BTreeMap<String, f64>,
    pub state_dim: usize,
}

impl SystemSpec {
    /// Default parameters: Van der Pol μ = 1.5; Lorenz-63 σ = 10, ρ = 28,
    /// b = 8/3; Rossler a = b = 0.1, c = 14; Lorenz-96 F = 8 with five
    /// sites; KS L = 11 reduced to 12 POD modes.
    pub fn new(kind: SystemKind) -> Self {
        let (params, dim): (&[(&str, f64)], usize) = match kind {
            SystemKind::VanDerPol => (&[("mu", 1.5)], 2),
            SystemKind::Lorenz63 => (&[("sigma", 10.0), ("rho", 28.0), ("b", 8.0 / 3.0)], 3),
            SystemKind::Rossler => (&[("a", 0.1), ("b", 0.1), ("c", 14.0)], 3),
            SystemKind::Lorenz96 => (&[("forcing", 8.0)], 5),
            SystemKind::Ks => (&[("l", 11.0), ("grid", 128.0)], 12),
        };
        Self {
            kind,
            params: params.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            state_dim: dim,
        }
    }

    pub fn vanderpol() -> Self {
        Self::new(SystemKind::VanDerPol)
    }
    pub fn lorenz63() -> Self {
        Self::new(SystemKind::Lorenz63)
    }
    pub fn rossler() -> Self {
        Self::new(SystemKind::Rossler)
    }
    pub fn lorenz96(n: usize) -> Self {
        let mut s = Self::new(SystemKind::Lorenz96);
        s.state_dim = n;
        s
    }
    pub fn ks() -> Self {
        Self::new(SystemKind::Ks)
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn is_ode(&self) -> bool {
        self.kind != SystemKind::Ks
    }

    /// Uniform box `[lo, hi]` per coordinate for random initial conditions,
    /// and the burn-in time discarded before recording. A `burn_in`
    /// parameter overrides the default time.
    pub fn sampling_box(&self) -> (Vec<(f64, f64)>, f64) {
        let (bounds, burn_in) = self.default_box();
        (bounds, self.params.get("burn_in").copied().unwrap_or(burn_in))
    }

    fn default_box(&self) -> (Vec<(f64, f64)>, f64) {
        match self.kind {
            SystemKind::VanDerPol => (vec![(-2.0, 2.0); 2], 10.0),
            SystemKind::Lorenz63 => (vec![(-15.0, 15.0), (-20.0, 20.0), (0.0, 40.0)], 10.0),
            SystemKind::Rossler => (vec![(-10.0, 10.0), (-10.0, 10.0), (0.0, 10.0)], 50.0),
            SystemKind::Lorenz96 => (vec![(-5.0, 5.0); self.state_dim], 10.0),
            SystemKind::Ks => {
                let l = self.param("l");
                (Vec::new(), (l / std::f64::consts::PI).powi(4))
            }
        }
    }
}

impl VectorField for SystemSpec {
    fn dim(&self) -> usize {
        self.state_dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::VanDerPol => {
                let mu = self.param("mu");
                out[0] = x[1];
                out[1] = -x[0] + mu * (1.0 - x[0] * x[0]) * x[1];
            }
            SystemKind::Lorenz63 => {
                let (s, r, b) = (self.param("sigma"), self.param("rho"), self.param("b"));
                out[0] = s * (x[1] - x[0]);
                out[1] = r * x[0] - x[1] - x[0] * x[2];
                out[2] = -b * x[2] + x[0] * x[1];
            }
            SystemKind::Rossler => {
                let (a, b, c) = (self.param("a"), self.param("b"), self.param("c"));
                out[0] = -x[1] - x[2];
                out[1] = x[0] + a * x[1];
                out[2] = b + x[2] * (x[0] - c);
            }
            SystemKind::Lorenz96 => {
                let f = self.param("forcing");
                let n = x.len();
                for i in 0..n {
                    let (ip1, im1, im2) = ((i + 1) % n, (i + n - 1) % n, (i + n - 2) % n);
                    out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + f;
                }
            }
            SystemKind::Ks => panic!("the KS system is integrated spectrally, not as an ODE"),
        }
    }

    fn jvp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::VanDerPol => {
                let mu = self.param("mu");
                out[0] = v[1];
                out[1] = (-1.0 - 2.0 * mu * x[0] * x[1]) * v[0] + mu * (1.0 - x[0] * x[0]) * v[1];
            }
            SystemKind::Lorenz63 => {
                let (s, r, b) = (self.param("sigma"), self.param("rho"), self.param("b"));
                out[0] = s * (v[1] - v[0]);
                out[1] = (r - x[2]) * v[0] - v[1] - x[0] * v[2];
                out[2] = x[1] * v[0] + x[0] * v[1] - b * v[2];
            }
            SystemKind::Rossler => {
                let (a, c) = (self.param("a"), self.param("c"));
                out[0] = -v[1] - v[2];
                out[1] = v[0] + a * v[1];
                out[2] = x[2] * v[0] + (x[0] - c) * v[2];
            }
            SystemKind::Lorenz96 => {
                let n = x.len();
                for i in 0..n {
                    let (ip1, im1, im2) = ((i + 1) % n, (i + n - 1) % n, (i + n - 2) % n);
                    out[i] = (v[ip1] - v[im2]) * x[im1] + (x[ip1] - x[im2]) * v[im1] - v[i];
                }
            }
            SystemKind::Ks => panic!("the KS system is integrated spectrally, not as an ODE"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_rhs_at_ones() {
        let mut out = [0.0; 3];
        SystemSpec::lorenz63().eval(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 26.0);
        assert!((out[2] + 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn default_parameters() {
        assert_eq!(SystemSpec::vanderpol().param("mu"), 1.5);
        let l = SystemSpec::lorenz63();
        assert_eq!((l.param("sigma"), l.param("rho")), (10.0, 28.0));
        assert!((l.param("b") - 8.0 / 3.0).abs() < 1e-15);
        let r = SystemSpec::rossler();
        assert_eq!((r.param("a"), r.param("b"), r.param("c")), (0.1, 0.1, 14.0));
        assert_eq!(SystemSpec::ks().param("l"), 11.0);
        assert_eq!(SystemSpec::ks().state_dim, 12);
    }

    #[test]
    fn parse_system_names() {
        for k in SystemKind::ALL {
            assert_eq!(k.name().parse::<SystemKind>().unwrap(), k);
        }
        assert!("duffing".parse::<SystemKind>().is_err());
    }

    #[test]
    fn jacobian_products_match_finite_differences() {
        let systems = [
            (SystemSpec::vanderpol(), vec![0.3, -1.2]),
            (SystemSpec::lorenz63(), vec![1.0, -2.0, 20.0]),
            (SystemSpec::rossler(), vec![2.0, 1.0, 0.5]),
            (SystemSpec::lorenz96(6), vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]),
        ];
        for (spec, x) in systems {
            let n = x.len();
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut jv = vec![0.0; n];
                spec.jvp(&x, &e, &mut jv);
                let h = 1e-6;
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
                spec.eval(&xp, &mut fp);
                spec.eval(&xm, &mut fm);
                for i in 0..n {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert!((fd - jv[i]).abs() < 1e-6, "{} d{i}/d{j}", spec.kind);
                }
            }
        }
    }
}
