use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::loss::{compute_losses, evaluate_losses, Batch, LossReport, LossSpec, Split};
use super::model::AutoencoderParams;
use super::schedule::{update_n_ob_bar, DelayUpdate};
use super::{Result, TrainConfig, TrainError};
use crate::autodiff::Matrix;
use crate::dynamics::Dataset;

/// Consecutive non-finite epochs that abort a run.
pub const ABORT_AFTER: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Mean over the epoch's batches, taken before each step.
    pub train: LossReport,
    pub test: LossReport,
    /// Delay count in force after this epoch's update.
    pub n_ob_bar: usize,
    pub skipped_steps: u64,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: AutoencoderParams,
    pub adam: AdamState,
    pub n_ob_bar: usize,
    pub history: Vec<EpochRecord>,
    pub updates: Vec<DelayUpdate>,
}

impl Checkpoint {
    pub fn loss_spec(&self) -> LossSpec {
        spec(&self.config, self.n_ob_bar)
    }

    /// Delay count after each epoch, preceded by the initial value.
    pub fn n_ob_bar_history(&self) -> Vec<usize> {
        std::iter::once(self.config.n_ob_bar)
            .chain(self.history.iter().map(|r| r.n_ob_bar))
            .collect()
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,split,n_ob_bar,l_recon,l_pred,l_dmd,l_reg,l_tot\n");
        for r in &self.history {
            for l in [&r.train, &r.test] {
                s.push_str(&format!(
                    "{},{},{},{:e},{:e},{:e},{:e},{:e}\n",
                    l.epoch,
                    l.split.name(),
                    l.n_ob_bar,
                    l.l_recon,
                    l.l_pred,
                    l.l_dmd,
                    l.l_reg,
                    l.l_tot
                ));
            }
        }
        s
    }
}

pub fn spec(config: &TrainConfig, n_ob_bar: usize) -> LossSpec {
    LossSpec {
        n_st: config.n_st,
        n_ob_bar,
        alpha: config.alpha,
        scope: config.scope,
        rel_tol: config.rel_tol,
    }
}

fn mean_report(reports: &[LossReport], alpha: f64, n_ob_bar: usize) -> LossReport {
    let n = reports.len().max(1) as f64;
    let avg = |f: fn(&LossReport) -> f64| {
        if reports.is_empty() {
            f64::NAN
        } else {
            reports.iter().map(f).sum::<f64>() / n
        }
    };
    let (l_recon, l_pred, l_dmd, l_reg) = (avg(|r| r.l_recon), avg(|r| r.l_pred), avg(|r| r.l_dmd), avg(|r| r.l_reg));
    LossReport {
        l_recon,
        l_pred,
        l_dmd,
        l_reg,
        l_tot: l_recon + l_pred + l_dmd + alpha * l_reg,
        epoch: 0,
        split: Split::Train,
        n_ob_bar,
    }
}

fn nan_report(n_ob_bar: usize) -> LossReport {
    LossReport {
        l_recon: f64::NAN,
        l_pred: f64::NAN,
        l_dmd: f64::NAN,
        l_reg: f64::NAN,
        l_tot: f64::NAN,
        epoch: 0,
        split: Split::Test,
        n_ob_bar,
    }
}

/// Largest delay count that still leaves a prediction target.
fn max_delay(config: &TrainConfig, steps: usize) -> usize {
    config.n_st.min(steps.saturating_sub(config.n_st + 1)).max(1)
}

/// One optimizer step on a batch. Returns the pre-step report, or `None`
/// when the loss or its gradient could not be formed.
fn train_batch(params: &mut AutoencoderParams, adam: &mut AdamState, batch: Batch<'_>, spec: &LossSpec, gamma: f64) -> Option<LossReport> {
    let graph = match compute_losses(params, batch, spec) {
        Ok(g) if g.report.is_finite() => g,
        Ok(_) | Err(_) => {
            adam.skipped += 1;
            return None;
        }
    };
    let grads = match graph.tape.backward(graph.root) {
        Ok(g) => g,
        Err(_) => {
            adam.skipped += 1;
            return None;
        }
    };
    let all = graph.params.all();
    let tensors = params.tensors();
    let g: Vec<Matrix> = all
        .iter()
        .zip(&tensors)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    let mut targets = params.tensors_mut();
    adam_step(&mut targets, &g, gamma, adam);
    Some(graph.report)
}

/// Runs the epoch loop on `train`, evaluating the whole of `test` with frozen
/// weights after each epoch.
pub fn train(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<Checkpoint> {
    let params = AutoencoderParams::init(train.state_dim(), config.n_e, config.hidden, config.seed)?;
    train_from(config, params, train, test)
}

/// Like [`train`] but starting from given weights.
pub fn train_from(config: &TrainConfig, params: AutoencoderParams, train: &Dataset, test: &Dataset) -> Result<Checkpoint> {
    config.validate()?;
    params.check()?;
    if train.state_dim() != params.state_dim() || test.state_dim() != params.state_dim() {
        return Err(TrainError::Shape(format!(
            "network takes {} states, data has {} (train) and {} (test)",
            params.state_dim(),
            train.state_dim(),
            test.state_dim()
        )));
    }
    if test.steps() != train.steps() || test.is_empty() {
        return Err(TrainError::Shape("test set must be non-empty and match the training length".into()));
    }
    let n_batches = train.len() / config.n_b;
    if n_batches == 0 {
        return Err(TrainError::Config(format!(
            "{} training trajectories do not fill one batch of {}",
            train.len(),
            config.n_b
        )));
    }
    let max = max_delay(config, train.steps());
    let test_values = test.stacked_all();
    let test_batch = Batch::new(&test_values, test.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut ck = Checkpoint {
        config: config.clone(),
        adam: AdamState::new(params.tensors()),
        params,
        n_ob_bar: config.n_ob_bar.min(max),
        history: Vec::with_capacity(config.e_max),
        updates: Vec::new(),
    };
    let mut bad_epochs = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.e_max {
        order.shuffle(&mut rng);
        let batches: Vec<Matrix> = order
            .chunks_exact(config.n_b)
            .take(n_batches)
            .map(|idx| train.stacked(idx))
            .collect();
        let s = spec(config, ck.n_ob_bar);
        let skipped_before = ck.adam.skipped;
        let mut reports = Vec::with_capacity(n_batches);
        for values in &batches {
            let b = Batch::new(values, config.n_b)?;
            if let Some(r) = train_batch(&mut ck.params, &mut ck.adam, b, &s, config.gamma) {
                reports.push(r);
            }
        }
        let mut train_report = mean_report(&reports, config.alpha, ck.n_ob_bar);
        train_report.epoch = epoch;

        let first = Batch::new(&batches[0], config.n_b)?;
        let params = &ck.params;
        let (next, evaluated) = update_n_ob_bar(ck.n_ob_bar, max, config.f_r, |n| {
            evaluate_losses(params, first, &spec(config, n)).ok().map(|r| r.l_tot)
        });
        if !evaluated.is_empty() {
            ck.updates.push(DelayUpdate {
                epoch,
                from: ck.n_ob_bar,
                to: next,
                evaluated,
            });
        }
        if next != ck.n_ob_bar {
            log::info!("epoch {epoch}: delay count {} -> {next}", ck.n_ob_bar);
            if next >= config.n_st {
                log::warn!("delay count reached n_st = {}; consider a larger f_r", config.n_st);
            }
        }
        ck.n_ob_bar = next;

        let mut test_report =
            evaluate_losses(&ck.params, test_batch, &spec(config, ck.n_ob_bar)).unwrap_or_else(|_| nan_report(ck.n_ob_bar));
        test_report.epoch = epoch;
        test_report.split = Split::Test;
        log::info!(
            "epoch {epoch}: train l_tot {:.4e}, test l_tot {:.4e}, n_ob_bar {}",
            train_report.l_tot,
            test_report.l_tot,
            ck.n_ob_bar
        );
        let finite = train_report.is_finite() && test_report.is_finite();
        ck.history.push(EpochRecord {
            train: train_report,
            test: test_report,
            n_ob_bar: ck.n_ob_bar,
            skipped_steps: ck.adam.skipped - skipped_before,
        });
        bad_epochs = if finite { 0 } else { bad_epochs + 1 };
        if bad_epochs >= ABORT_AFTER {
            return Err(TrainError::Aborted {
                epoch,
                checkpoint: Box::new(ck),
            });
        }
    }
    Ok(ck)
}
