//! Browser bindings: simulate a system, fit Hankel DMD, and compute lagged
//! mutual information. Every entry point returns a JSON string.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use khdm::autodiff::{Matrix, DIAGNOSTIC_REL_TOL};
use khdm::dmd::{build_hankel, fit_global, reconstruct, reconstruction_error, shifted_snapshots, spectrum};
use khdm::dynamics::{sample_dataset, Dataset, SystemKind, SystemSpec};
use khdm::mi::{alsi, Source, DEFAULT_K};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Guards against requests that would freeze a browser tab.
const MAX_TRAJ: usize = 256;
const MAX_SAMPLES: usize = 4001;

#[derive(Debug, Serialize, PartialEq)]
pub struct Simulation {
    pub system: String,
    pub dims: usize,
    pub dt: f64,
    /// One row per trajectory, each `dims × steps` flattened column-major.
    pub trajectories: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct HdmdSummary {
    pub n_ob_bar: usize,
    pub n_st: usize,
    pub svd_rank: usize,
    pub max_error_pct: f64,
    pub per_trajectory_pct: Vec<f64>,
    pub eigen_re: Vec<f64>,
    pub eigen_im: Vec<f64>,
    pub ill_conditioned: bool,
    /// First trajectory: recorded values at the targets and their
    /// reconstruction, both `dims × count` column-major.
    pub truth: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub dims: usize,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct LaggedMi {
    pub n: usize,
    pub v: usize,
    /// Nats at lags `0..=max_lag`.
    pub values: Vec<f64>,
}

fn spec(system: &str) -> Result<SystemSpec, String> {
    let kind: SystemKind = system.parse().map_err(|e| format!("{e}"))?;
    if kind == SystemKind::Ks {
        return Err("the demo covers the ODE systems only".into());
    }
    Ok(SystemSpec::new(kind))
}

fn sample(system: &str, n_traj: usize, t_f: f64, dt: f64, seed: u64) -> Result<Dataset, String> {
    if n_traj == 0 || n_traj > MAX_TRAJ {
        return Err(format!("trajectory count must be in 1..={MAX_TRAJ}"));
    }
    if !(dt > 0.0) || !(t_f > 0.0) || t_f / dt > MAX_SAMPLES as f64 {
        return Err(format!("need dt > 0, t_f > 0 and at most {MAX_SAMPLES} samples"));
    }
    sample_dataset(&spec(system)?, n_traj, t_f, dt, seed).map_err(|e| e.to_string())
}

pub fn simulate_report(system: &str, n_traj: usize, t_f: f64, dt: f64, seed: u64) -> Result<Simulation, String> {
    let ds = sample(system, n_traj, t_f, dt, seed)?;
    Ok(Simulation {
        system: system.to_string(),
        dims: ds.state_dim(),
        dt: ds.dt,
        trajectories: ds.trajectories.iter().map(|t| t.values.as_slice().to_vec()).collect(),
    })
}

pub fn hdmd_report(
    system: &str,
    n_traj: usize,
    t_f: f64,
    dt: f64,
    n_ob_bar: usize,
    n_st: usize,
    seed: u64,
) -> Result<HdmdSummary, String> {
    let ds = sample(system, n_traj, t_f, dt, seed)?;
    let y = ds.stacked_all();
    let stack = build_hankel(&y, ds.len(), n_ob_bar).map_err(|e| e.to_string())?;
    let per = stack.layout.cols_per_traj();
    if n_st >= ds.steps() {
        return Err(format!("n_st must be below {} samples", ds.steps()));
    }
    let starts = shifted_snapshots(&y, &stack.layout, 0, per);
    let fit = fit_global(&stack, &starts, DIAGNOSTIC_REL_TOL).map_err(|e| e.to_string())?;
    let report = reconstruction_error(&fit, &stack, &y, n_st).map_err(|e| e.to_string())?;
    let spec = spectrum(&fit, ds.dt).map_err(|e| e.to_string())?;
    let rec = reconstruct(&fit, &stack, n_st).map_err(|e| e.to_string())?;

    // first trajectory, targets still inside the recording
    let count = per.min(ds.steps() - n_st);
    let dims = ds.state_dim();
    let first = &ds.trajectories[0].values;
    let truth = first.columns(n_st, count).iter().copied().collect();
    let reconstruction = rec.columns(0, count).iter().copied().collect();
    Ok(HdmdSummary {
        n_ob_bar,
        n_st,
        svd_rank: fit.svd_rank,
        max_error_pct: report.max_pct_with_iterated.unwrap_or(f64::NAN),
        per_trajectory_pct: report.per_trajectory,
        eigen_re: spec.eigenvalues.iter().map(|z| z.re).collect(),
        eigen_im: spec.eigenvalues.iter().map(|z| z.im).collect(),
        ill_conditioned: spec.ill_conditioned,
        truth,
        reconstruction,
        dims,
    })
}

/// Averaged lagged mutual information for every coordinate pair.
pub fn lagged_mi_report(
    system: &str,
    n_traj: usize,
    t_f: f64,
    dt: f64,
    max_lag: usize,
    seed: u64,
) -> Result<Vec<LaggedMi>, String> {
    let ds = sample(system, n_traj, t_f, dt, seed)?;
    let trajs: Vec<Matrix> = ds.trajectories.iter().map(|t| t.values.clone()).collect();
    let table = alsi(&trajs, max_lag, DEFAULT_K, Source::Original).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for n in 0..table.dims {
        for v in 0..table.dims {
            out.push(LaggedMi {
                n: n + 1,
                v: v + 1,
                values: table.curve(n, v).to_vec(),
            });
        }
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn simulate(system: &str, n_traj: usize, t_f: f64, dt: f64, seed: u32) -> Result<String, JsError> {
    to_js(simulate_report(system, n_traj, t_f, dt, seed as u64))
}

#[wasm_bindgen]
pub fn hdmd(system: &str, n_traj: usize, t_f: f64, dt: f64, n_ob_bar: usize, n_st: usize, seed: u32) -> Result<String, JsError> {
    to_js(hdmd_report(system, n_traj, t_f, dt, n_ob_bar, n_st, seed as u64))
}

#[wasm_bindgen]
pub fn lagged_mi(system: &str, n_traj: usize, t_f: f64, dt: f64, max_lag: usize, seed: u32) -> Result<String, JsError> {
    to_js(lagged_mi_report(system, n_traj, t_f, dt, max_lag, seed as u64))
}
