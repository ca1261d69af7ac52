use std::collections::BinaryHeap;

use super::{MiError, Result};

/// Shortest series accepted by the estimators.
pub const MIN_SAMPLES: usize = 50;
/// Neighbour count used unless stated otherwise.
pub const DEFAULT_K: usize = 3;
/// Bins per axis of the histogram estimator.
pub const HISTOGRAM_BINS: usize = 32;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Estimated mutual information in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub value: f64,
    /// Set when the samples have no continuous joint density: a constant
    /// series, repeated points, or identical series.
    pub degenerate: bool,
}

/// `ψ(1..=n)` from harmonic numbers, index 0 unused.
fn digamma_table(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    let mut h = 0.0;
    for (i, slot) in t.iter_mut().enumerate().skip(1) {
        *slot = h - EULER_GAMMA;
        h += 1.0 / i as f64;
    }
    t
}

fn check(x: &[f64], y: &[f64], k: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(MiError::Contract(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < MIN_SAMPLES {
        return Err(MiError::Contract(format!("need at least {MIN_SAMPLES} samples, got {}", x.len())));
    }
    if k == 0 || k >= x.len() {
        return Err(MiError::Contract(format!("neighbour count {k} out of range")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MiError::Contract("series contain non-finite values".into()));
    }
    Ok(())
}

/// Number of entries of sorted `s` strictly within `eps` of `c`, minus one
/// for the point itself.
fn count_within(s: &[f64], c: f64, eps: f64) -> usize {
    let lo = s.partition_point(|&v| v <= c - eps);
    let hi = s.partition_point(|&v| v < c + eps);
    (hi - lo).saturating_sub(1)
}

/// Distances to the `k` nearest neighbours of every point under the max
/// norm, searched outward along the x order.
fn kth_distances(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut heap: BinaryHeap<OrdF64> = BinaryHeap::with_capacity(k + 1);
    for (pos, &i) in order.iter().enumerate() {
        heap.clear();
        let (mut lo, mut hi) = (pos, pos + 1);
        loop {
            let bound = if heap.len() == k { heap.peek().map_or(f64::INFINITY, |d| d.0) } else { f64::INFINITY };
            let left = (lo > 0).then(|| (x[i] - x[order[lo - 1]]).abs());
            let right = (hi < n).then(|| (x[order[hi]] - x[i]).abs());
            let step_left = match (left, right) {
                (Some(l), Some(r)) => l <= r,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let dx = if step_left { left.unwrap() } else { right.unwrap() };
            if dx > bound {
                break;
            }
            let j = if step_left {
                lo -= 1;
                order[lo]
            } else {
                hi += 1;
                order[hi - 1]
            };
            let d = dx.max((y[i] - y[j]).abs());
            if heap.len() < k {
                heap.push(OrdF64(d));
            } else if d < heap.peek().unwrap().0 {
                heap.pop();
                heap.push(OrdF64(d));
            }
        }
        out[i] = heap.peek().map_or(0.0, |d| d.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Kraskov–Stögbauer–Grassberger estimate (first variant, max norm):
/// `ψ(k) + ψ(N) − ⟨ψ(n_x + 1) + ψ(n_y + 1)⟩`.
pub fn mutual_information(x: &[f64], y: &[f64], k: usize) -> Result<MiEstimate> {
    check(x, y, k)?;
    let n = x.len();
    let psi = digamma_table(n + 1);
    let eps = kth_distances(x, y, k);
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for i in 0..n {
        let nx = count_within(&xs, x[i], eps[i]);
        let ny = count_within(&ys, y[i], eps[i]);
        acc += psi[nx + 1] + psi[ny + 1];
    }
    let value = psi[k] + psi[n] - acc / n as f64;
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    let degenerate = eps.contains(&0.0) || constant(x) || constant(y) || x == y;
    if degenerate {
        log::warn!("mutual information on degenerate samples");
    }
    Ok(MiEstimate { value, degenerate })
}

/// Plug-in estimate on an equal-width `bins × bins` histogram.
pub fn histogram_mi(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    check(x, y, 1)?;
    if bins == 0 {
        return Err(MiError::Contract("need at least one bin".into()));
    }
    let index = |s: &[f64]| -> Vec<usize> {
        let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let w = (hi - lo) / bins as f64;
        s.iter()
            .map(|&v| if w > 0.0 { (((v - lo) / w) as usize).min(bins - 1) } else { 0 })
            .collect()
    };
    let (ix, iy) = (index(x), index(y));
    let mut joint = vec![0usize; bins * bins];
    let (mut px, mut py) = (vec![0usize; bins], vec![0usize; bins]);
    for (&a, &b) in ix.iter().zip(&iy) {
        joint[a * bins + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let n = x.len() as f64;
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p * n * n / (px[a] as f64 * py[b] as f64)).ln();
            }
        }
    }
    Ok(mi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn gaussian_pair(rho: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x.push(a);
            y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        (x, y)
    }

    fn brute_kth(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut d: Vec<f64> = (0..x.len())
                    .filter(|&j| j != i)
                    .map(|j| (x[i] - x[j]).abs().max((y[i] - y[j]).abs()))
                    .collect();
                d.sort_by(f64::total_cmp);
                d[k - 1]
            })
            .collect()
    }

    #[test]
    fn digamma_values() {
        let t = digamma_table(4);
        assert!((t[1] + EULER_GAMMA).abs() < 1e-15);
        assert!((t[2] - (1.0 - EULER_GAMMA)).abs() < 1e-15);
        assert!((t[4] - (1.0 + 0.5 + 1.0 / 3.0 - EULER_GAMMA)).abs() < 1e-15);
    }

    #[test]
    fn neighbour_search_matches_brute_force() {
        let (x, y) = gaussian_pair(0.6, 300, 5);
        for k in [1, 3, 7] {
            assert_eq!(kth_distances(&x, &y, k), brute_kth(&x, &y, k));
        }
    }

    #[test]
    fn gaussian_closed_form() {
        for rho in [0.5, 0.9] {
            let (x, y) = gaussian_pair(rho, 10_000, 1);
            let est = mutual_information(&x, &y, 3).unwrap();
            let exact = -0.5 * (1.0 - rho * rho).ln();
            assert!((est.value - exact).abs() < 0.05, "rho {rho}: {} vs {exact}", est.value);
            assert!(!est.degenerate);
        }
    }

    #[test]
    fn independent_uniforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..10_000).map(|_| u.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..10_000).map(|_| u.sample(&mut rng)).collect();
        assert!(mutual_information(&x, &y, 3).unwrap().value.abs() < 0.02);
        assert!(histogram_mi(&x, &y, HISTOGRAM_BINS).unwrap() < 0.1);
    }

    #[test]
    fn identical_series_flagged() {
        let (x, _) = gaussian_pair(0.0, 1000, 3);
        let est = mutual_information(&x, &x, 3).unwrap();
        assert!(est.degenerate);
        assert!(est.value > 3.0);
        let c = vec![1.0; 100];
        assert!(mutual_information(&c, &x[..100], 3).unwrap().degenerate);
    }

    #[test]
    fn histogram_cross_check() {
        let (x, y) = gaussian_pair(0.9, 10_000, 4);
        let h = histogram_mi(&x, &y, HISTOGRAM_BINS).unwrap();
        let k = mutual_information(&x, &y, 3).unwrap().value;
        // plug-in estimates are biased upward but land in the same range
        assert!((h - k).abs() < 0.2, "{h} vs {k}");
    }

    #[test]
    fn contract_violations() {
        let x = vec![0.0; 49];
        assert!(mutual_information(&x, &x, 3).is_err());
        let x: Vec<f64> = (0..60).map(f64::from).collect();
        assert!(mutual_information(&x, &x[..59], 3).is_err());
        assert!(mutual_information(&x, &x, 0).is_err());
    }

    #[test]
    fn error_shrinks_with_samples() {
        let exact = -0.5 * (1.0f64 - 0.81).ln();
        let median_err = |n: usize| {
            let mut e: Vec<f64> = (0..20)
                .map(|s| {
                    let (x, y) = gaussian_pair(0.9, n, 100 + s);
                    (mutual_information(&x, &y, 3).unwrap().value - exact).abs()
                })
                .collect();
            e.sort_by(f64::total_cmp);
            (e[9] + e[10]) / 2.0
        };
        assert!(median_err(10_000) < median_err(1_000));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]
            #[test]
            fn symmetric(seed in any::<u64>(), rho in -0.95f64..0.95, n in 50usize..400) {
                let (x, y) = gaussian_pair(rho, n, seed);
                let a = mutual_information(&x, &y, 3).unwrap();
                let b = mutual_information(&y, &x, 3).unwrap();
                prop_assert_eq!(a.value, b.value);
            }

            #[test]
            fn monotone_transform_within_noise(seed in any::<u64>()) {
                let (x, y) = gaussian_pair(0.7, 10_000, seed);
                let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
                let a = mutual_information(&x, &y, 3).unwrap().value;
                let b = mutual_information(&cubed, &y, 3).unwrap().value;
                prop_assert!((a - b).abs() < 0.05, "{} vs {}", a, b);
            }
        }
    }
}
