use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use khdm::autodiff::Matrix;
use khdm::dmd::{build_hankel, fit_global, reconstruction_error, shifted_snapshots, spectrum, ReconstructionWindow};
use khdm::dynamics::{largest_lyapunov, sample_dataset, Dataset, SystemKind, SystemSpec};
use khdm::io::{checkpoint_from_archive, checkpoint_to_archive, dataset_to_csv, fit_to_archive, read_dataset, write_dataset, Archive};
use khdm::mi::{alsi, alsi_compare, AlsiTable, Source, DEFAULT_K};
use khdm::train::{encode, evaluate_losses, predict, prediction_error_pct, train, tune, Batch, Checkpoint, SearchSpace, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{Cli, Command, EvaluateArgs, GenerateArgs, HdmdArgs, LyapunovArgs, MiArgs, TrainArgs, TuneArgs};

pub fn run(cli: &Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let ctx = Ctx {
        settings,
        config: cli.config.clone(),
        seed: cli.seed,
    };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Hdmd(a) => hdmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Mi(a) => mi(&ctx, a),
        Command::Lyapunov(a) => lyapunov(&ctx, a),
        Command::Tune(a) => tune_cmd(&ctx, a),
    }
}

struct Ctx {
    settings: Settings,
    config: Option<PathBuf>,
    seed: Option<u64>,
}

impl Ctx {
    fn seed(&self, key: &str) -> CliResult<u64> {
        self.settings.get_or(key, self.seed, 0)
    }

    fn manifest(&self, command: &str, seed: u64) -> RunManifest {
        RunManifest::start(command, self.config.as_deref(), seed)
    }

    /// System spec with `system.*` parameter overrides applied.
    fn system(&self, name: &str) -> CliResult<SystemSpec> {
        let kind: SystemKind = name.parse().map_err(|e: khdm::dynamics::DynamicsError| CliError::Usage(e.to_string()))?;
        let mut spec = SystemSpec::new(kind);
        for (k, v) in self.settings.section("system") {
            let x: f64 = v
                .parse()
                .map_err(|_| CliError::Usage(format!("system.{k} has invalid value {v:?}")))?;
            if k == "dim" {
                spec.state_dim = x as usize;
            } else {
                spec = spec.with_param(&k, x);
            }
        }
        Ok(spec)
    }
}

fn out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write(path: &Path, text: &str, manifest: &mut RunManifest) -> CliResult<()> {
    std::fs::write(path, text)?;
    manifest.output(path)
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let system: String = s
        .get("data.system", a.system.clone())?
        .ok_or_else(|| CliError::Usage("generate needs --system (or data.system in the config)".into()))?;
    let spec = ctx.system(&system)?;
    let n_traj = s.get_or("data.n_traj", a.n_traj, 128)?;
    let t_f = s.get_or("data.t_f", a.tf, 20.0)?;
    let dt = s.get_or("data.dt", a.dt, 0.05)?;
    let seed = ctx.seed("data.seed")?;
    let mut m = ctx.manifest("generate", seed);
    let ds = sample_dataset(&spec, n_traj, t_f, dt, seed)?;
    if let Some(p) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(p)?;
    }
    write_dataset(&a.out, &ds)?;
    m.output(&a.out)?;
    if a.csv {
        write(&a.out.with_extension("csv"), &dataset_to_csv(&ds), &mut m)?;
    }
    println!(
        "wrote {} trajectories of {} samples in {} dimensions to {}",
        ds.len(),
        ds.steps(),
        ds.state_dim(),
        a.out.display()
    );
    m.write(&a.out.with_extension("manifest.json"))?;
    Ok(())
}

fn hdmd(ctx: &Ctx, a: &HdmdArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let n_ob_bar = s.get_or("hdmd.n_ob_bar", a.n_ob_bar, 10)?;
    let n_st = s.get_or("hdmd.n_st", a.n_st, 20)?;
    let rel_tol = s.get_or("hdmd.rel_tol", a.rel_tol, khdm::autodiff::DIAGNOSTIC_REL_TOL)?;
    let mut m = ctx.manifest("hdmd", ctx.seed("hdmd.seed")?);
    let ds = read_dataset(&a.data)?;
    m.input(&a.data)?;
    out_dir(&a.out)?;
    let y = ds.stacked_all();
    let stack = build_hankel(&y, ds.len(), n_ob_bar)?;
    let starts = shifted_snapshots(&y, &stack.layout, 0, stack.layout.cols_per_traj());
    let fit = fit_global(&stack, &starts, rel_tol)?;
    let report = reconstruction_error(&fit, &stack, &y, n_st)?;
    let spec = spectrum(&fit, ds.dt)?;

    let mut csv = String::from("trajectory,error_pct\n");
    for (k, e) in report.per_trajectory.iter().enumerate() {
        let _ = writeln!(csv, "{k},{e:.10e}");
    }
    write(&a.out.join("hdmd_errors.csv"), &csv, &mut m)?;
    write(&a.out.join("spectrum.csv"), &spec.to_csv(), &mut m)?;
    let fit_path = a.out.join("fit.khdm");
    fit_to_archive(&fit).write(&fit_path)?;
    m.output(&fit_path)?;
    let pct = |o: Option<f64>| o.map_or("n/a".to_string(), |v| format!("{v:.6}%"));
    println!("n_ob_bar {n_ob_bar}, n_st {n_st}, svd rank {}", fit.svd_rank);
    println!("max relative error (reconstruction): {}", pct(report.max_pct_reconstruction));
    println!("max relative error (with iterated): {}", pct(report.max_pct_with_iterated));
    if spec.ill_conditioned {
        println!("warning: eigenvector matrix is ill-conditioned (condition {:.3e})", spec.condition);
    }
    m.write(&a.out.join("hdmd.manifest.json"))?;
    Ok(())
}

fn train_config(ctx: &Ctx, system: Option<&String>, overrides: &[(&str, Option<String>)]) -> CliResult<TrainConfig> {
    let mut map = ctx.settings.section("train");
    if let Some(s) = system {
        map.insert("system".into(), s.clone());
    }
    for (k, v) in overrides {
        if let Some(v) = v {
            map.insert(k.to_string(), v.clone());
        }
    }
    if let Some(seed) = ctx.seed {
        map.insert("seed".into(), seed.to_string());
    }
    TrainConfig::from_kv(&map).map_err(|e| CliError::Usage(e.to_string()))
}

/// Training trajectories first, then test ones.
fn load_or_sample(ctx: &Ctx, data: Option<&PathBuf>, c: &TrainConfig, m: &mut RunManifest) -> CliResult<(Dataset, Dataset)> {
    let ds = match data {
        Some(p) => {
            let ds = read_dataset(p)?;
            m.input(p)?;
            ds
        }
        None => sample_dataset(&ctx.system(c.system.name())?, c.n_c + c.n_test, c.t_f, c.dt, c.seed)?,
    };
    if ds.len() < c.n_c + c.n_test {
        return Err(CliError::Data(format!(
            "dataset has {} trajectories, need {} for training and {} for testing",
            ds.len(),
            c.n_c,
            c.n_test
        )));
    }
    let (tr, rest) = ds.split(c.n_c);
    let (te, _) = rest.split(c.n_test);
    Ok((tr, te))
}

fn history_csv(ck: &Checkpoint) -> String {
    let mut s = String::from("epoch,n_ob_bar\n");
    for (e, n) in ck.n_ob_bar_history().iter().enumerate() {
        let _ = writeln!(s, "{e},{n}");
    }
    s
}

fn updates_csv(ck: &Checkpoint) -> String {
    let mut s = String::from("epoch,from,to,candidate,l_tot\n");
    for u in &ck.updates {
        for (n, l) in &u.evaluated {
            let _ = writeln!(s, "{},{},{},{n},{l:.10e}", u.epoch, u.from, u.to);
        }
    }
    s
}

const LOSS_PLOT: &str = r#"import csv, sys
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open(sys.argv[1] if len(sys.argv) > 1 else "losses.csv")))
fig, axes = plt.subplots(1, 4, figsize=(16, 3.5))
for ax, key in zip(axes, ["l_tot", "l_recon", "l_pred", "l_dmd"]):
    for split, style in [("train", "--"), ("test", "-")]:
        pts = [(int(r["epoch"]), float(r[key])) for r in rows if r["split"] == split]
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], style, label=split)
    ax.set_title(key)
    ax.set_xlabel("epoch")
axes[0].legend()
fig.tight_layout()
fig.savefig("losses.png", dpi=150)
"#;

const EVAL_PLOT: &str = r#"import csv, sys
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open(sys.argv[1] if len(sys.argv) > 1 else "evaluation.csv")))
traj = rows[0]["trajectory"]
rows = [r for r in rows if r["trajectory"] == traj]
dims = sorted(k for k in rows[0] if k.startswith("pred_"))
fig, axes = plt.subplots(len(dims), 1, figsize=(10, 2.5 * len(dims)), sharex=True)
axes = axes if len(dims) > 1 else [axes]
for ax, d in zip(axes, dims):
    truth = d.replace("pred_", "true_")
    t = [float(r["t"]) for r in rows]
    ax.plot(t, [float(r[d]) for r in rows], label="model")
    ax.plot([float(r["t"]) for r in rows if r[truth]], [float(r[truth]) for r in rows if r[truth]], "--", label="data")
    fc = [float(r["t"]) for r in rows if r["window"] == "forecast"]
    if fc:
        ax.axvspan(min(fc), max(fc), color="0.9")
    ax.set_ylabel(d[5:])
axes[0].legend()
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig("evaluation.png", dpi=150)
"#;

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let c = train_config(
        ctx,
        a.system.as_ref(),
        &[
            ("n_ob_bar", a.n_ob_bar.map(|v| v.to_string())),
            ("f_r", a.f_r.map(|v| v.to_string())),
            ("e_max", a.e_max.map(|v| v.to_string())),
            ("scope", a.scope.clone()),
        ],
    )?;
    let mut m = ctx.manifest("train", c.seed);
    let (tr, te) = load_or_sample(ctx, a.data.as_ref(), &c, &mut m)?;
    out_dir(&a.out)?;
    let ck = match train(&c, &tr, &te) {
        Ok(ck) => ck,
        Err(khdm::train::TrainError::Aborted { epoch, checkpoint }) => {
            write(&a.out.join("losses.csv"), &checkpoint.loss_csv(), &mut m)?;
            return Err(CliError::Numerical(format!("training aborted after epoch {epoch}; history kept in losses.csv")));
        }
        Err(e) => return Err(e.into()),
    };
    let ck_path = a.out.join("checkpoint.khdm");
    checkpoint_to_archive(&ck).write(&ck_path)?;
    m.output(&ck_path)?;
    write(&a.out.join("losses.csv"), &ck.loss_csv(), &mut m)?;
    write(&a.out.join("n_ob_bar.csv"), &history_csv(&ck), &mut m)?;
    write(&a.out.join("delay_updates.csv"), &updates_csv(&ck), &mut m)?;
    write(&a.out.join("train.conf"), &c.to_kv("train"), &mut m)?;
    if a.plot_script {
        write(&a.out.join("plot_losses.py"), LOSS_PLOT, &mut m)?;
    }
    if let Some(last) = ck.history.last() {
        println!(
            "epoch {}: test l_tot {:.6e} (recon {:.3e}, pred {:.3e}, dmd {:.3e}), n_ob_bar {}",
            last.test.epoch, last.test.l_tot, last.test.l_recon, last.test.l_pred, last.test.l_dmd, ck.n_ob_bar
        );
    }
    m.write(&a.out.join("train.manifest.json"))?;
    Ok(())
}

fn load_checkpoint(path: &Path, m: &mut RunManifest) -> CliResult<Checkpoint> {
    let ck = checkpoint_from_archive(&Archive::read(path)?)?;
    m.input(path)?;
    Ok(ck)
}

fn check_dims(ck: &Checkpoint, ds: &Dataset) -> CliResult<()> {
    if ds.state_dim() != ck.params.state_dim() {
        return Err(CliError::Data(format!(
            "checkpoint expects {}-dimensional states, dataset has {}",
            ck.params.state_dim(),
            ds.state_dim()
        )));
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> CliResult<()> {
    let mut m = ctx.manifest("evaluate", ctx.seed.unwrap_or(0));
    let ck = load_checkpoint(&a.checkpoint, &mut m)?;
    let ds = read_dataset(&a.data)?;
    m.input(&a.data)?;
    check_dims(&ck, &ds)?;
    let ds = if !a.all && ds.len() > ck.config.n_c { ds.split(ck.config.n_c).1 } else { ds };
    out_dir(&a.out)?;
    let values = ds.stacked_all();
    let batch = Batch::new(&values, ds.len()).map_err(CliError::from)?;
    let spec = ck.loss_spec();
    let p = predict(&ck.params, batch, &spec)?;
    let losses = evaluate_losses(&ck.params, batch, &spec)?;
    let pct = prediction_error_pct(&ck.params, batch, &spec)?;
    let (steps, per, n_s) = (ds.steps(), p.layout.cols_per_traj(), ds.state_dim());

    let mut csv = String::from("trajectory,step,t,window");
    for d in 1..=n_s {
        let _ = write!(csv, ",pred_x{d}");
    }
    for d in 1..=n_s {
        let _ = write!(csv, ",true_x{d}");
    }
    csv.push('\n');
    for k in 0..ds.len() {
        for w in 0..per {
            let target = w + spec.n_st;
            let kind = match ReconstructionWindow::classify(per, steps, w, spec.n_st) {
                ReconstructionWindow::Reconstruction => "reconstruction",
                ReconstructionWindow::Iterated => "iterated",
                ReconstructionWindow::Forecast => "forecast",
            };
            let _ = write!(csv, "{k},{target},{},{kind}", target as f64 * ds.dt);
            for d in 0..n_s {
                let _ = write!(csv, ",{:.10e}", p.prediction[(d, k * per + w)]);
            }
            for d in 0..n_s {
                if target < steps {
                    let _ = write!(csv, ",{:.10e}", values[(d, k * steps + target)]);
                } else {
                    csv.push(',');
                }
            }
            csv.push('\n');
        }
    }
    write(&a.out.join("evaluation.csv"), &csv, &mut m)?;
    let summary = format!(
        "metric,value\nn_ob_bar,{}\nl_recon,{:e}\nl_pred,{:e}\nl_dmd,{:e}\nl_reg,{:e}\nl_tot,{:e}\nmax_prediction_error_pct,{:e}\n",
        spec.n_ob_bar, losses.l_recon, losses.l_pred, losses.l_dmd, losses.l_reg, losses.l_tot, pct
    );
    write(&a.out.join("evaluation_summary.csv"), &summary, &mut m)?;
    if a.plot_script {
        write(&a.out.join("plot_evaluation.py"), EVAL_PLOT, &mut m)?;
    }
    println!(
        "{} trajectories: l_tot {:.6e}, l_pred {:.6e}, max prediction error {:.4}%",
        ds.len(),
        losses.l_tot,
        losses.l_pred,
        pct
    );
    m.write(&a.out.join("evaluate.manifest.json"))?;
    Ok(())
}

fn mi(ctx: &Ctx, a: &MiArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let max_lag = s.get_or("mi.max_lag", a.max_lag, 40)?;
    let k = s.get_or("mi.k", a.k, DEFAULT_K)?;
    let (want_orig, want_latent) = match a.source.as_str() {
        "original" => (true, false),
        "latent" => (false, true),
        "both" => (true, true),
        other => return Err(CliError::Usage(format!("--source must be original, latent or both, got {other:?}"))),
    };
    let mut m = ctx.manifest("mi", ctx.seed.unwrap_or(0));
    let ds = read_dataset(&a.data)?;
    m.input(&a.data)?;
    let n = a.max_traj.unwrap_or(ds.len()).min(ds.len());
    let trajs: Vec<Matrix> = ds.trajectories[..n].iter().map(|t| t.values.clone()).collect();
    out_dir(&a.out)?;
    let mut orig: Option<AlsiTable> = None;
    let mut latent: Option<AlsiTable> = None;
    if want_orig {
        let t = alsi(&trajs, max_lag, k, Source::Original)?;
        write(&a.out.join("alsi_original.csv"), &t.to_csv(), &mut m)?;
        orig = Some(t);
    }
    if want_latent {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Usage("latent coordinates need --checkpoint".into()))?;
        let ck = load_checkpoint(path, &mut m)?;
        check_dims(&ck, &ds)?;
        let lat: Vec<Matrix> = trajs.iter().map(|t| encode(&ck.params, t)).collect::<Result<_, _>>()?;
        let t = alsi(&lat, max_lag, k, Source::Latent)?;
        write(&a.out.join("alsi_latent.csv"), &t.to_csv(), &mut m)?;
        latent = Some(t);
    }
    if let (Some(o), Some(l)) = (&orig, &latent) {
        match alsi_compare(o, l) {
            Ok(c) => {
                write(&a.out.join("alsi_compare.csv"), &c.to_csv(), &mut m)?;
                for p in &c.pairs {
                    println!("I_{}{}: L1 distance {:.4} nats, peak shift {:?}", p.n, p.v, p.l1_sum, p.shift);
                }
            }
            Err(e) => log::warn!("tables not comparable: {e}"),
        }
    }
    m.write(&a.out.join("mi.manifest.json"))?;
    Ok(())
}

fn lyapunov(ctx: &Ctx, a: &LyapunovArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let system: String = s
        .get("lyapunov.system", a.system.clone())?
        .ok_or_else(|| CliError::Usage("lyapunov needs --system".into()))?;
    let spec = ctx.system(&system)?;
    let horizon = s.get_or("lyapunov.horizon", a.horizon, 500.0)?;
    let renorm = s.get_or("lyapunov.renorm", a.renorm, 5000)?;
    let seed = ctx.seed("lyapunov.seed")?;
    let l = largest_lyapunov(&spec, horizon, renorm, seed)?;
    println!("{l:.6}");
    Ok(())
}

/// `tune.n_b = 64,128`, `tune.alpha = lo,hi`, `tune.gamma = lo,hi`; unset
/// keys keep the default ranges.
fn search_space(s: &Settings) -> CliResult<SearchSpace> {
    fn list<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
        v.split(',')
            .map(|x| x.trim().parse().map_err(|_| CliError::Usage(format!("{key} has invalid entry {x:?}"))))
            .collect()
    }
    fn range(key: &str, v: &str) -> CliResult<(f64, f64)> {
        match list::<f64>(key, v)?[..] {
            [x] => Ok((x, x)),
            [lo, hi] => Ok((lo, hi)),
            _ => Err(CliError::Usage(format!("{key} takes one value or lo,hi"))),
        }
    }
    let mut space = SearchSpace::default();
    if let Some(v) = s.map.get("tune.n_b") {
        space.n_b = list("tune.n_b", v)?;
    }
    if let Some(v) = s.map.get("tune.alpha") {
        space.alpha = range("tune.alpha", v)?;
    }
    if let Some(v) = s.map.get("tune.gamma") {
        space.gamma = range("tune.gamma", v)?;
    }
    Ok(space)
}

fn tune_cmd(ctx: &Ctx, a: &TuneArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let c = train_config(ctx, a.system.as_ref(), &[("e_tst", a.e_tst.map(|v| v.to_string()))])?;
    let budget = s.get_or("tune.budget", a.budget, 6)?;
    let mut m = ctx.manifest("tune", c.seed);
    let (tr, te) = load_or_sample(ctx, a.data.as_ref(), &c, &mut m)?;
    out_dir(&a.out)?;
    let space = search_space(s)?;
    let ranked = tune(&c, &space, budget, &tr, &te)?;
    let mut csv = String::from("rank,final_test_l_tot,n_b,alpha,gamma,seed,final_n_ob_bar\n");
    for (i, t) in ranked.iter().enumerate() {
        let score = t.score.map_or("failed".to_string(), |v| format!("{v:e}"));
        let _ = writeln!(
            csv,
            "{},{score},{},{:e},{:e},{},{}",
            i + 1,
            t.config.n_b,
            t.config.alpha,
            t.config.gamma,
            t.config.seed,
            t.final_n_ob_bar
        );
    }
    write(&a.out.join("tune.csv"), &csv, &mut m)?;
    print!("{csv}");
    m.write(&a.out.join("tune.manifest.json"))?;
    Ok(())
}
