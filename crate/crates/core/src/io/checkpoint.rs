use super::{config::section, Archive, IoError, Result};
use crate::autodiff::Matrix;
use crate::dmd::{FitScope, KoopmanFit};
use crate::train::{AdamState, AutoencoderParams, Checkpoint, DelayUpdate, EpochRecord, Layer, LossReport, Split, TrainConfig, AFFINE_MAPS};

const HISTORY_COLS: usize = 15;

fn report_row(r: &LossReport) -> [f64; 6] {
    [r.n_ob_bar as f64, r.l_recon, r.l_pred, r.l_dmd, r.l_reg, r.l_tot]
}

fn report_from(row: &[f64], epoch: usize, split: Split) -> LossReport {
    LossReport {
        n_ob_bar: row[0] as usize,
        l_recon: row[1],
        l_pred: row[2],
        l_dmd: row[3],
        l_reg: row[4],
        l_tot: row[5],
        epoch,
        split,
    }
}

pub fn checkpoint_to_archive(ck: &Checkpoint) -> Archive {
    let mut a = Archive::new("checkpoint");
    for line in ck.config.to_kv("train").lines() {
        if let Some((k, v)) = line.split_once('=') {
            a.set(k.trim(), v.trim());
        }
    }
    a.set("checkpoint.n_ob_bar", ck.n_ob_bar);
    a.set("adam.t", ck.adam.t);
    a.set("adam.skipped", ck.adam.skipped);
    for (tag, layers) in [("encoder", &ck.params.encoder), ("decoder", &ck.params.decoder)] {
        for (i, l) in layers.iter().enumerate() {
            a.push(format!("{tag}.{i}.weight"), l.weight.clone());
            a.push(format!("{tag}.{i}.bias"), l.bias.clone());
        }
    }
    for (i, (m, v)) in ck.adam.m.iter().zip(&ck.adam.v).enumerate() {
        a.push(format!("adam.m.{i}"), m.clone());
        a.push(format!("adam.v.{i}"), v.clone());
    }
    let mut hist = Matrix::zeros(ck.history.len(), HISTORY_COLS);
    for (i, r) in ck.history.iter().enumerate() {
        let mut row = vec![r.train.epoch as f64, r.n_ob_bar as f64, r.skipped_steps as f64];
        row.extend(report_row(&r.train));
        row.extend(report_row(&r.test));
        for (j, x) in row.into_iter().enumerate() {
            hist[(i, j)] = x;
        }
    }
    a.push("history", hist);
    let rows: Vec<[f64; 5]> = ck
        .updates
        .iter()
        .flat_map(|u| {
            u.evaluated
                .iter()
                .map(move |&(n, l)| [u.epoch as f64, u.from as f64, u.to as f64, n as f64, l])
        })
        .collect();
    a.push("updates", Matrix::from_fn(rows.len(), 5, |i, j| rows[i][j]));
    a
}

fn incompatible(msg: String) -> IoError {
    IoError::Incompatible(msg)
}

pub fn checkpoint_from_archive(a: &Archive) -> Result<Checkpoint> {
    if a.kind() != Some("checkpoint") {
        return Err(incompatible(format!("archive holds {:?}, not a checkpoint", a.kind())));
    }
    let config = TrainConfig::from_kv(&section(&a.metadata, "train")).map_err(|e| incompatible(e.to_string()))?;
    let layers = |tag: &str| -> Result<Vec<Layer>> {
        (0..AFFINE_MAPS)
            .map(|i| {
                Ok(Layer {
                    weight: a.block(&format!("{tag}.{i}.weight"))?.clone(),
                    bias: a.block(&format!("{tag}.{i}.bias"))?.clone(),
                })
            })
            .collect()
    };
    let params = AutoencoderParams {
        encoder: layers("encoder")?,
        decoder: layers("decoder")?,
    };
    params.check().map_err(|e| incompatible(e.to_string()))?;
    if params.latent_dim() != config.n_e || params.hidden() != config.hidden {
        return Err(incompatible(format!(
            "weights are {}-wide with latent {}, config says {} and {}",
            params.hidden(),
            params.latent_dim(),
            config.hidden,
            config.n_e
        )));
    }
    let n = 2 * 2 * AFFINE_MAPS;
    let mut adam = AdamState {
        m: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        t: a.meta_parse("adam.t")?,
        skipped: a.meta_parse("adam.skipped")?,
    };
    for i in 0..n {
        adam.m.push(a.block(&format!("adam.m.{i}"))?.clone());
        adam.v.push(a.block(&format!("adam.v.{i}"))?.clone());
    }
    let h = a.block("history")?;
    if h.ncols() != HISTORY_COLS {
        return Err(IoError::Format(format!("history has {} columns", h.ncols())));
    }
    let history = (0..h.nrows())
        .map(|i| {
            let row: Vec<f64> = h.row(i).iter().copied().collect();
            let epoch = row[0] as usize;
            EpochRecord {
                n_ob_bar: row[1] as usize,
                skipped_steps: row[2] as u64,
                train: report_from(&row[3..9], epoch, Split::Train),
                test: report_from(&row[9..15], epoch, Split::Test),
            }
        })
        .collect();
    let u = a.block("updates")?;
    let mut updates: Vec<DelayUpdate> = Vec::new();
    for i in 0..u.nrows() {
        let (epoch, from, to, n, l) = (u[(i, 0)] as usize, u[(i, 1)] as usize, u[(i, 2)] as usize, u[(i, 3)] as usize, u[(i, 4)]);
        match updates.last_mut() {
            Some(last) if last.epoch == epoch => last.evaluated.push((n, l)),
            _ => updates.push(DelayUpdate {
                epoch,
                from,
                to,
                evaluated: vec![(n, l)],
            }),
        }
    }
    Ok(Checkpoint {
        config,
        params,
        adam,
        n_ob_bar: a.meta_parse("checkpoint.n_ob_bar")?,
        history,
        updates,
    })
}

pub fn fit_to_archive(fit: &KoopmanFit) -> Archive {
    let mut a = Archive::new("koopman_fit");
    a.set("fit.svd_rank", fit.svd_rank);
    a.set("fit.n_ob_bar", fit.n_ob_bar);
    a.set("fit.retained_ratio", fit.retained_ratio);
    a.set(
        "fit.scope",
        match fit.scope {
            FitScope::Global => "global",
            FitScope::Local => "local",
        },
    );
    a.push("k_a", fit.k_a.clone());
    a.push("k_m_bar", fit.k_m_bar.clone());
    a
}

pub fn fit_from_archive(a: &Archive) -> Result<KoopmanFit> {
    if a.kind() != Some("koopman_fit") {
        return Err(incompatible(format!("archive holds {:?}, not a fit", a.kind())));
    }
    let scope = match a.meta("fit.scope")? {
        "global" => FitScope::Global,
        "local" => FitScope::Local,
        other => return Err(IoError::Format(format!("unknown scope {other}"))),
    };
    Ok(KoopmanFit {
        k_a: a.block("k_a")?.clone(),
        k_m_bar: a.block("k_m_bar")?.clone(),
        svd_rank: a.meta_parse("fit.svd_rank")?,
        scope,
        n_ob_bar: a.meta_parse("fit.n_ob_bar")?,
        retained_ratio: a.meta_parse("fit.retained_ratio")?,
    })
}
