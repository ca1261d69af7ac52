use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::run::train;
use super::{Result, TrainConfig, TrainError};
use crate::dynamics::Dataset;

/// Random-search distributions: batch size from a list, regularization
/// weight and learning rate log-uniform on closed ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub n_b: Vec<usize>,
    pub alpha: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_b: vec![64, 128, 256],
            alpha: (1e-12, 1e-8),
            gamma: (1e-5, 1e-2),
        }
    }
}

impl SearchSpace {
    pub fn is_point(&self) -> bool {
        self.n_b.len() == 1 && self.alpha.0 == self.alpha.1 && self.gamma.0 == self.gamma.1
    }

    fn check(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if self.n_b.is_empty() || self.n_b.contains(&0) || !ok(self.alpha) || !ok(self.gamma) {
            return Err(TrainError::Config(format!("invalid search space {self:?}")));
        }
        Ok(())
    }

    fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
        if lo == hi {
            return lo;
        }
        rng.random_range(lo.ln()..=hi.ln()).exp()
    }

    /// `budget` configurations derived from `base`, each with its own seed.
    pub fn sample(&self, base: &TrainConfig, budget: usize) -> Result<Vec<TrainConfig>> {
        self.check()?;
        let count = if self.is_point() { budget.min(1) } else { budget };
        let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
        rng.set_stream(7);
        Ok((0..count)
            .map(|i| {
                let n_b = self.n_b[rng.random_range(0..self.n_b.len())];
                let alpha = Self::log_uniform(&mut rng, self.alpha);
                let gamma = Self::log_uniform(&mut rng, self.gamma);
                TrainConfig {
                    n_b,
                    alpha,
                    gamma,
                    e_max: base.e_tst,
                    seed: base.seed.wrapping_add(1 + i as u64),
                    ..base.clone()
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub config: TrainConfig,
    /// Final test `l_tot`, or `None` when the run failed.
    pub score: Option<f64>,
    pub final_n_ob_bar: usize,
}

fn run_trial(config: TrainConfig, train_set: &Dataset, test: &Dataset) -> Trial {
    match train(&config, train_set, test) {
        Ok(ck) => Trial {
            score: ck.history.last().map(|r| r.test.l_tot).filter(|v| v.is_finite()),
            final_n_ob_bar: ck.n_ob_bar,
            config,
        },
        Err(e) => {
            log::warn!("trial with seed {} failed: {e}", config.seed);
            Trial {
                score: None,
                final_n_ob_bar: config.n_ob_bar,
                config,
            }
        }
    }
}

/// Trains every sampled configuration for `e_tst` epochs and ranks them by
/// final test loss, failed trials last.
pub fn tune(base: &TrainConfig, space: &SearchSpace, budget: usize, train_set: &Dataset, test: &Dataset) -> Result<Vec<Trial>> {
    if budget == 0 {
        return Err(TrainError::Config("tuning budget must be at least 1".into()));
    }
    let configs = space.sample(base, budget)?;
    #[cfg(feature = "parallel")]
    let mut trials: Vec<Trial> = configs.into_par_iter().map(|c| run_trial(c, train_set, test)).collect();
    #[cfg(not(feature = "parallel"))]
    let mut trials: Vec<Trial> = configs.into_iter().map(|c| run_trial(c, train_set, test)).collect();
    if trials.iter().all(|t| t.score.is_none()) {
        return Err(TrainError::Tuning(format!("all {} trials failed", trials.len())));
    }
    trials.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(trials)
}
