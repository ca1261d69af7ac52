use std::fmt::Write as _;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::estimator::{mutual_information, MIN_SAMPLES};
use super::{MiError, Result};
use crate::autodiff::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Original,
    Latent,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Original => "original",
            Source::Latent => "latent",
        }
    }
}

/// Lagged self-information `I_nv(m)` averaged over trajectories, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct AlsiTable {
    pub dims: usize,
    pub max_lag: usize,
    pub source: Source,
    /// Row-major over `(n, v, m)`.
    pub values: Vec<f64>,
}

impl AlsiTable {
    fn offset(&self, n: usize, v: usize) -> usize {
        (n * self.dims + v) * (self.max_lag + 1)
    }

    pub fn get(&self, n: usize, v: usize, m: usize) -> f64 {
        self.values[self.offset(n, v) + m]
    }

    /// `I_nv(0..=max_lag)`.
    pub fn curve(&self, n: usize, v: usize) -> &[f64] {
        let o = self.offset(n, v);
        &self.values[o..o + self.max_lag + 1]
    }

    /// CSV rows `n,v,m,value_nats,source` with 1-based coordinates.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,v,m,value_nats,source\n");
        for n in 0..self.dims {
            for v in 0..self.dims {
                for (m, x) in self.curve(n, v).iter().enumerate() {
                    let _ = writeln!(s, "{},{},{m},{x:.8e},{}", n + 1, v + 1, self.source.name());
                }
            }
        }
        s
    }
}

/// Per-trajectory `I(y_n(t), y_v(t + m))` over the common support,
/// averaged over trajectories in input order.
pub fn alsi(trajectories: &[Matrix], max_lag: usize, k: usize, source: Source) -> Result<AlsiTable> {
    let first = trajectories
        .first()
        .ok_or_else(|| MiError::Contract("no trajectories".into()))?;
    let (dims, len) = first.shape();
    if trajectories.iter().any(|t| t.shape() != (dims, len)) {
        return Err(MiError::Contract("trajectories differ in shape".into()));
    }
    if dims == 0 || len < max_lag + MIN_SAMPLES {
        return Err(MiError::Contract(format!(
            "lag {max_lag} leaves {} overlapping samples, need {MIN_SAMPLES}",
            len.saturating_sub(max_lag)
        )));
    }
    let per_traj = |t: &Matrix| -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = (0..dims).map(|d| t.row(d).iter().copied().collect()).collect();
        let mut out = Vec::with_capacity(dims * dims * (max_lag + 1));
        for n in 0..dims {
            for v in 0..dims {
                for m in 0..=max_lag {
                    let span = len - m;
                    out.push(mutual_information(&rows[n][..span], &rows[v][m..], k)?.value);
                }
            }
        }
        Ok(out)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<f64>> = trajectories.par_iter().map(per_traj).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<f64>> = trajectories.iter().map(per_traj).collect::<Result<_>>()?;
    let mut values = vec![0.0; dims * dims * (max_lag + 1)];
    for p in &parts {
        for (a, b) in values.iter_mut().zip(p) {
            *a += b;
        }
    }
    let inv = 1.0 / trajectories.len() as f64;
    values.iter_mut().for_each(|v| *v *= inv);
    Ok(AlsiTable {
        dims,
        max_lag,
        source,
        values,
    })
}

/// First interior lag where the curve has a local maximum.
pub fn first_local_max(curve: &[f64]) -> Option<usize> {
    (1..curve.len().saturating_sub(1)).find(|&m| curve[m] > curve[m - 1] && curve[m] >= curve[m + 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    /// 1-based coordinates.
    pub n: usize,
    pub v: usize,
    /// `Σ_m |I_latent − I_original|`.
    pub l1_sum: f64,
    /// The same sum divided by the number of lags.
    pub l1_mean: f64,
    pub peak_original: Option<usize>,
    pub peak_latent: Option<usize>,
    /// Latent peak lag minus original peak lag.
    pub shift: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsiComparison {
    pub pairs: Vec<PairComparison>,
}

impl AlsiComparison {
    pub fn pair(&self, n: usize, v: usize) -> Option<&PairComparison> {
        self.pairs.iter().find(|p| p.n == n && p.v == v)
    }

    pub fn to_csv(&self) -> String {
        let opt = |o: Option<i64>| o.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("n,v,l1_sum,l1_mean,peak_original,peak_latent,shift\n");
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{},{},{:.8e},{:.8e},{},{},{}",
                p.n,
                p.v,
                p.l1_sum,
                p.l1_mean,
                opt(p.peak_original.map(|x| x as i64)),
                opt(p.peak_latent.map(|x| x as i64)),
                opt(p.shift)
            );
        }
        s
    }
}

pub fn alsi_compare(original: &AlsiTable, latent: &AlsiTable) -> Result<AlsiComparison> {
    if original.dims != latent.dims || original.max_lag != latent.max_lag {
        return Err(MiError::Contract(format!(
            "tables differ: {}x{} lags vs {}x{} lags",
            original.dims, original.max_lag, latent.dims, latent.max_lag
        )));
    }
    let mut pairs = Vec::with_capacity(original.dims * original.dims);
    for n in 0..original.dims {
        for v in 0..original.dims {
            let (a, b) = (original.curve(n, v), latent.curve(n, v));
            let l1_sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
            let (pa, pb) = (first_local_max(a), first_local_max(b));
            pairs.push(PairComparison {
                n: n + 1,
                v: v + 1,
                l1_sum,
                l1_mean: l1_sum / a.len() as f64,
                peak_original: pa,
                peak_latent: pb,
                shift: pa.zip(pb).map(|(x, y)| y as i64 - x as i64),
            });
        }
    }
    Ok(AlsiComparison { pairs })
}
