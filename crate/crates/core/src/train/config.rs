use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::{Result, TrainError};
use crate::autodiff::TRAINING_REL_TOL;
use crate::dmd::FitScope;
use crate::dynamics::SystemKind;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub system: SystemKind,
    /// Latent dimension `N_e`.
    pub n_e: usize,
    /// Training trajectories `N_C`.
    pub n_c: usize,
    pub n_test: usize,
    /// Batch size `N_B`.
    pub n_b: usize,
    /// Weight of the regularization term.
    pub alpha: f64,
    /// Learning rate.
    pub gamma: f64,
    /// Relative-change threshold for delay updates. `inf` disables them.
    pub f_r: f64,
    /// Steps advanced by the Koopman operator.
    pub n_st: usize,
    /// Initial delay count.
    pub n_ob_bar: usize,
    pub e_max: usize,
    /// Epochs per tuning trial.
    pub e_tst: usize,
    /// Hidden layer width.
    pub hidden: usize,
    pub seed: u64,
    pub scope: FitScope,
    pub t_f: f64,
    pub dt: f64,
    pub rel_tol: f64,
}

impl TrainConfig {
    /// Tabulated defaults per system.
    pub fn preset(system: SystemKind) -> Self {
        let base = Self {
            system,
            n_e: 3,
            n_c: 1024,
            n_test: 256,
            n_b: 64,
            alpha: 3.46e-12,
            gamma: 5.07e-4,
            f_r: 0.05,
            n_st: 20,
            n_ob_bar: 10,
            e_max: 40,
            e_tst: 5,
            hidden: 64,
            seed: 0,
            scope: FitScope::Global,
            t_f: 20.0,
            dt: 0.05,
            rel_tol: TRAINING_REL_TOL,
        };
        match system {
            SystemKind::Rossler => Self {
                f_r: 0.25,
                n_b: 256,
                alpha: 2.52e-12,
                gamma: 1e-4,
                ..base
            },
            SystemKind::Ks => Self {
                n_e: 12,
                n_ob_bar: 5,
                f_r: 0.15,
                alpha: 4.85e-12,
                gamma: 8.1e-4,
                n_st: 14,
                hidden: 128,
                n_c: 64,
                n_test: 16,
                n_b: 16,
                t_f: 150.25,
                dt: 0.25,
                ..base
            },
            SystemKind::VanDerPol => Self { n_e: 2, ..base },
            SystemKind::Lorenz96 => Self { n_e: 5, ..base },
            SystemKind::Lorenz63 => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.n_e == 0 || self.hidden == 0 {
            return bad("latent and hidden widths must be positive".into());
        }
        if self.n_b == 0 || self.n_c < self.n_b {
            return bad(format!("need at least one batch: n_c = {}, n_b = {}", self.n_c, self.n_b));
        }
        if self.n_st == 0 || self.n_ob_bar == 0 {
            return bad("n_st and n_ob_bar must be positive".into());
        }
        if !(self.gamma > 0.0) || !(self.alpha >= 0.0) || !(self.f_r >= 0.0) {
            return bad(format!(
                "need gamma > 0, alpha >= 0, f_r >= 0 (got {}, {}, {})",
                self.gamma, self.alpha, self.f_r
            ));
        }
        if !(self.dt > 0.0 && self.t_f > 0.0) || !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return bad("need dt > 0, t_f > 0 and 0 < rel_tol < 1".into());
        }
        Ok(())
    }

    /// Flat `key = value` form, one field per line, under `section.`.
    pub fn to_kv(&self, section: &str) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{section}.{k} = {v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("system", self.system.name().to_string()),
            ("n_e", self.n_e.to_string()),
            ("n_c", self.n_c.to_string()),
            ("n_test", self.n_test.to_string()),
            ("n_b", self.n_b.to_string()),
            ("alpha", format!("{:e}", self.alpha)),
            ("gamma", format!("{:e}", self.gamma)),
            ("f_r", self.f_r.to_string()),
            ("n_st", self.n_st.to_string()),
            ("n_ob_bar", self.n_ob_bar.to_string()),
            ("e_max", self.e_max.to_string()),
            ("e_tst", self.e_tst.to_string()),
            ("hidden", self.hidden.to_string()),
            ("seed", self.seed.to_string()),
            (
                "scope",
                match self.scope {
                    FitScope::Global => "global",
                    FitScope::Local => "local",
                }
                .to_string(),
            ),
            ("t_f", self.t_f.to_string()),
            ("dt", self.dt.to_string()),
            ("rel_tol", format!("{:e}", self.rel_tol)),
        ]
    }

    /// Builds a config from flat keys. `system` picks the preset, then every
    /// other key overrides it. Unknown keys are rejected.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let system = match map.get("system") {
            Some(s) => s
                .parse::<SystemKind>()
                .map_err(|e| TrainError::Config(e.to_string()))?,
            None => SystemKind::Lorenz63,
        };
        let mut c = Self::preset(system);
        for (k, v) in map {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("bad value for {key}: {v:?}")))
        }
        match key {
            "system" => {}
            "n_e" => self.n_e = p(key, value)?,
            "n_c" => self.n_c = p(key, value)?,
            "n_test" => self.n_test = p(key, value)?,
            "n_b" => self.n_b = p(key, value)?,
            "alpha" => self.alpha = p(key, value)?,
            "gamma" => self.gamma = p(key, value)?,
            "f_r" => self.f_r = p(key, value)?,
            "n_st" => self.n_st = p(key, value)?,
            "n_ob_bar" => self.n_ob_bar = p(key, value)?,
            "e_max" => self.e_max = p(key, value)?,
            "e_tst" => self.e_tst = p(key, value)?,
            "hidden" => self.hidden = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "t_f" => self.t_f = p(key, value)?,
            "dt" => self.dt = p(key, value)?,
            "rel_tol" => self.rel_tol = p(key, value)?,
            "scope" => {
                self.scope = match value.trim() {
                    "global" => FitScope::Global,
                    "local" => FitScope::Local,
                    other => return Err(TrainError::Config(format!("unknown scope {other:?}"))),
                }
            }
            other => return Err(TrainError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }
}
