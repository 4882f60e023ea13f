//! Experiment orchestration behind the command-line subcommands.
//!
//! Each command builds its runs from an [`ExperimentConfig`], executes
//! independent runs on scoped threads, and writes artifacts into the output
//! directory only after every run has finished.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bounds::{estimate_gamma, settling_bound, verify_decrease, BoundFlavor, GammaEstimate, GammaSource, SettlingBound};
use crate::config::{Auto, DataSource, ExperimentConfig, GammaChoice, Init, LossChoice, RunMode};
use crate::control::GainSchedule;
use crate::data::{gen_blobs, gen_linreg, load_csv, normalize, split, Dataset};
use crate::dynamics::{integrate, ControlLaw, Flow, Integrator, StoppingRule, TrainMode, Trajectory};
use crate::error::{Error, Result};
use crate::kv::{opt_f64, KvDoc};
use crate::loss::LossKind;
use crate::net::{forward, loss_gradient, output_error, sample_loss, sensitivities, Mlp};
use crate::perturb::{robustness_run, PerturbationMode};
use crate::svg::{LineChart, Series};

/// Finite-difference step used by `gradcheck`.
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Denominator floor of the gradient relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-4;
/// States with a smaller output error are skipped by `gradcheck`.
pub const GRADCHECK_MIN_ERROR: f64 = 0.1;
const MONOTONE_SLACK: f64 = 1e-9;

/// Everything a run needs besides the loss and gains.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mlp: Mlp,
    pub mode: TrainMode,
    pub gamma: GammaEstimate,
    /// Held-out part when `data.split` is set.
    pub test: Option<Dataset>,
    pub warnings: Vec<String>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    let raw = match &cfg.data.source {
        DataSource::Sample { .. } => return Ok(None),
        DataSource::Csv { path, schema } => load_csv(path, schema)?,
        DataSource::Blobs { per_class, separation } => gen_blobs(cfg.seed, *per_class, *separation)?,
        DataSource::Linreg {
            count,
            noise_sd,
            coeffs,
        } => gen_linreg(cfg.seed, *count, *noise_sd, coeffs)?,
    };
    Ok(Some(normalize(&raw, cfg.data.normalize)))
}

pub fn init_network(cfg: &ExperimentConfig) -> Result<Mlp> {
    let layers = &cfg.network.layers;
    match cfg.network.init {
        Init::Zeros => Mlp::zeros(layers, cfg.network.output),
        Init::Uniform { scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Mlp::random(layers, cfg.network.output, scale, &mut rng)
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mlp = init_network(cfg)?;
    let mut warnings = Vec::new();
    let dataset = load_dataset(cfg)?;
    let (train, test) = match dataset {
        Some(ds) => {
            warnings.extend(ds.warnings().iter().cloned());
            if cfg.data.split {
                let (a, b) = split(&ds, cfg.seed)?;
                (Some(a), Some(b))
            } else {
                (Some(ds), None)
            }
        }
        None => (None, None),
    };
    let mode = match (cfg.mode, &cfg.data.source, &train) {
        (RunMode::Theory, DataSource::Sample { x, y }, _) => TrainMode::TheoryFlow {
            x: x.clone(),
            y_star: y.clone(),
        },
        (RunMode::Theory, _, Some(ds)) => {
            let idx = cfg.data.sample_index;
            if idx >= ds.len() {
                return Err(Error::invalid(
                    "data.sample_index",
                    format!("{idx} is out of range for {} samples", ds.len()),
                ));
            }
            let (x, y) = ds.sample(idx);
            TrainMode::TheoryFlow {
                x: x.to_vec(),
                y_star: y.to_vec(),
            }
        }
        (RunMode::Epoch, _, Some(ds)) => TrainMode::EpochFlow {
            dataset: ds.clone(),
            order: cfg.order(),
        },
        _ => return Err(Error::invalid("run.mode", "epoch mode needs a dataset source")),
    };
    let inputs: Vec<Vec<f64>> = match &mode {
        TrainMode::TheoryFlow { x, .. } => vec![x.clone()],
        TrainMode::EpochFlow { dataset, .. } => dataset.inputs().to_vec(),
    };
    let gamma = match cfg.gamma {
        GammaChoice::Bias => estimate_gamma(&inputs, GammaSource::BiasUnit)?,
        GammaChoice::Data => estimate_gamma(&inputs, GammaSource::DataMin)?,
        GammaChoice::Auto if cfg.network.single_law() => estimate_gamma(&inputs, GammaSource::DataMin)?,
        GammaChoice::Auto => estimate_gamma(&inputs, GammaSource::BiasUnit)?,
        GammaChoice::Value(g) => GammaEstimate::user(g)?,
    };
    Ok(Prepared {
        mlp,
        mode,
        gamma,
        test,
        warnings,
    })
}

pub fn flow_for(cfg: &ExperimentConfig, loss: LossChoice, alpha: f64, k: f64) -> Result<Flow> {
    let law = if cfg.network.single_law() {
        ControlLaw::SingleNeuron
    } else {
        ControlLaw::Multilayer
    };
    Ok(Flow::new(cfg.loss_kind(loss, alpha)?, law, GainSchedule::scalar(k)?))
}

/// Nominal settling bound for a Lyapunov flow; `None` for baselines, a
/// zero initial loss, or exponents outside the bound's range.
pub fn nominal_bound(cfg: &ExperimentConfig, prep: &Prepared, flow: &Flow) -> Result<Option<SettlingBound>> {
    let Some(loss) = flow.loss.lyapunov() else {
        return Ok(None);
    };
    if !(loss.beta() > 0.0 && loss.beta() < 1.0) {
        return Ok(None);
    }
    let e0 = prep.mode.initial_loss(&prep.mlp, &flow.loss)?;
    if e0 <= 0.0 {
        return Ok(None);
    }
    let flavor = match flow.law {
        ControlLaw::SingleNeuron => BoundFlavor::SingleNeuron,
        ControlLaw::Multilayer => BoundFlavor::Mlp,
    };
    let mut b = settling_bound(e0, &flow.gains, &prep.gamma, loss, flavor, None)?;
    b.heuristic = cfg.mode == RunMode::Epoch;
    Ok(Some(b))
}

/// Resolves `auto` step and horizon: a theory run with a bound `T` uses
/// `dt = T/10⁴` and `t_max = 2T`; otherwise `dt = 10⁻³` and `t_max = 100`.
pub fn integrator_for(cfg: &ExperimentConfig, bound: Option<&SettlingBound>) -> Result<Integrator> {
    let theory_t = bound.filter(|_| cfg.mode == RunMode::Theory).map(|b| b.t_bound);
    let dt = match cfg.integrator.dt {
        Auto::Value(v) => v,
        Auto::Auto => theory_t.map_or(1e-3, |t| t / 1e4),
    };
    let t_max = match cfg.integrator.t_max {
        Auto::Value(v) => v,
        Auto::Auto => theory_t.map_or(100.0, |t| 2.0 * t),
    };
    let mut integ = Integrator::new(cfg.integrator.method, dt, t_max)?;
    integ.step_budget = cfg.integrator.step_budget;
    integ.record_stride = cfg.integrator.record_stride;
    integ.validate()?;
    Ok(integ)
}

/// One trained variant.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub name: String,
    pub loss: String,
    pub bound: Option<f64>,
    pub settle: Option<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_secs: f64,
    pub monotonicity_violations: usize,
    /// Whether a guarantee covers the run.
    pub guaranteed: Option<bool>,
    /// Whether every interior record satisfied the decrease inequality.
    pub decrease_ok: Option<bool>,
    pub note: String,
}

impl RunRow {
    fn from_run(name: impl Into<String>, flow: &Flow, traj: &Trajectory, bound: Option<&SettlingBound>, wall: f64) -> Self {
        Self {
            name: name.into(),
            loss: flow.loss.name().to_string(),
            bound: bound.map(|b| b.t_bound),
            settle: traj.settled_at,
            initial_loss: traj.initial_loss(),
            final_loss: traj.final_loss(),
            wall_secs: wall,
            monotonicity_violations: traj.monotonicity_violations(MONOTONE_SLACK).len(),
            guaranteed: None,
            decrease_ok: bound.map(|b| verify_decrease(traj, b).passed),
            note: String::new(),
        }
    }

    /// `settle ≤ T`, when both exist.
    pub fn within_bound(&self) -> Option<bool> {
        match (self.settle, self.bound) {
            (Some(s), Some(t)) => Some(s <= t),
            (None, Some(_)) => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub command: String,
    pub rows: Vec<RunRow>,
    /// Command-specific entries appended to `summary.kv`.
    pub extra: KvDoc,
}

fn opt_bool(v: Option<bool>) -> String {
    v.map_or_else(|| "none".into(), |b| b.to_string())
}

impl RunSummary {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            rows: Vec::new(),
            extra: KvDoc::default(),
        }
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut kv = KvDoc::default();
        kv.push("command", &self.command);
        kv.push("rows", self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            let p = format!("row.{i}");
            kv.push(format!("{p}.name"), &r.name);
            kv.push(format!("{p}.loss"), &r.loss);
            kv.push(format!("{p}.bound"), opt_f64(r.bound));
            kv.push(format!("{p}.settle"), opt_f64(r.settle));
            kv.push(format!("{p}.within_bound"), opt_bool(r.within_bound()));
            kv.push(format!("{p}.initial_loss"), r.initial_loss);
            kv.push(format!("{p}.final_loss"), r.final_loss);
            kv.push(format!("{p}.wall_secs"), format!("{:.6}", r.wall_secs));
            kv.push(format!("{p}.monotonicity_violations"), r.monotonicity_violations);
            kv.push(format!("{p}.guaranteed"), opt_bool(r.guaranteed));
            kv.push(format!("{p}.decrease_ok"), opt_bool(r.decrease_ok));
            if !r.note.is_empty() {
                kv.push(format!("{p}.note"), &r.note);
            }
        }
        for e in self.extra.entries() {
            kv.push(e.key.clone(), &e.value);
        }
        kv
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<9} {:>13} {:>13} {:>13} {:>10} {:>6}  note",
            "run", "loss", "bound T", "settle", "final E", "wall s", "viol"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:<9} {:>13} {:>13} {:>13.6e} {:>10.4} {:>6}  {}",
                r.name,
                r.loss,
                fmt(r.bound),
                fmt(r.settle),
                r.final_loss,
                r.wall_secs,
                r.monotonicity_violations,
                r.note
            );
        }
        out
    }
}

struct Finished {
    tag: String,
    row: RunRow,
    traj: Trajectory,
}

fn run_parallel<T: Send>(jobs: Vec<Box<dyn FnOnce() -> Result<T> + Send + '_>>) -> Result<Vec<T>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.into_iter().map(|job| s.spawn(job)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// gnuplot-compatible blocks, one per series, separated by two blank lines.
pub fn curves_dat(series: &[(String, &Trajectory)]) -> String {
    let mut out = String::new();
    for (idx, (name, traj)) in series.iter().enumerate() {
        if idx > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# {name}\n# t E");
        for r in &traj.records {
            let _ = writeln!(out, "{} {}", r.t, r.loss);
        }
    }
    out
}

fn loss_chart(cfg: &ExperimentConfig, title: &str, series: &[(String, &Trajectory)]) -> String {
    LineChart {
        title: title.to_string(),
        x_label: "t".into(),
        y_label: "E".into(),
        log_y: cfg.log_y,
        series: series
            .iter()
            .map(|(name, traj)| Series {
                name: name.clone(),
                points: traj.records.iter().map(|r| (r.t, r.loss)).collect(),
            })
            .collect(),
    }
    .render()
}

fn emit(cfg: &ExperimentConfig, out: &Path, summary: &RunSummary, runs: &[Finished], single_name: bool) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    for f in runs {
        let name = if single_name {
            "trajectory.csv".to_string()
        } else {
            format!("trajectory_{}.csv", f.tag)
        };
        write_file(&out.join(name), &f.traj.to_csv())?;
    }
    write_file(&out.join("summary.kv"), &summary.to_kv().render())?;
    let series: Vec<(String, &Trajectory)> = runs.iter().map(|f| (f.row.name.clone(), &f.traj)).collect();
    if !series.is_empty() {
        write_file(&out.join("curves.dat"), &curves_dat(&series))?;
        if cfg.svg {
            write_file(&out.join("loss_curve.svg"), &loss_chart(cfg, &summary.command, &series))?;
        }
    }
    Ok(())
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

/// Trains the configured loss once.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    let flow = flow_for(cfg, cfg.loss.kind, cfg.loss.alpha, cfg.k)?;
    let stop = StoppingRule::new(cfg.epsilon)?;
    let nominal = nominal_bound(cfg, &prep, &flow)?;
    let integ = integrator_for(cfg, nominal.as_ref())?;
    let mut summary = RunSummary::new("train");
    let finished = if let Some(pc) = &cfg.perturb {
        let spec = cfg.perturbation_spec(pc.mode);
        let (res, wall) = timed(|| robustness_run(&prep.mlp, &prep.mode, &spec, &flow, &prep.gamma, &integ, &stop))?;
        let mut row = RunRow::from_run(flow.loss.name(), &flow, &res.trajectory, res.bound.as_ref(), wall);
        row.guaranteed = Some(res.guaranteed);
        row.note = res.note;
        Finished {
            tag: flow.loss.name().into(),
            row,
            traj: res.trajectory,
        }
    } else {
        let (traj, wall) = timed(|| integrate(&prep.mlp, &prep.mode, &flow, &integ, &stop))?;
        let mut row = RunRow::from_run(flow.loss.name(), &flow, &traj, nominal.as_ref(), wall);
        if let Some(b) = &nominal {
            row.guaranteed = Some(flow.law == ControlLaw::SingleNeuron && !b.heuristic);
            summary.extra.push("bound.c", b.c);
            summary.extra.push("bound.beta", b.beta);
            summary.extra.push("bound.gamma", b.gamma);
            summary.extra.push("bound.flavor", b.flavor.name());
        }
        Finished {
            tag: flow.loss.name().into(),
            row,
            traj,
        }
    };
    summary.extra.push("dt", integ.dt);
    summary.extra.push("t_max", integ.t_max);
    if let Some(test) = &prep.test {
        let (loss, _) = crate::dynamics::dataset_loss(&finished.traj.final_mlp, test, &flow.loss)?;
        summary.extra.push("test_loss", loss);
    }
    for (i, w) in prep.warnings.iter().enumerate() {
        summary.extra.push(format!("warning.{i}"), w);
    }
    summary.rows.push(finished.row.clone());
    emit(cfg, out, &summary, &[finished], true)?;
    Ok(summary)
}

/// Trains Lyapunov, L1 and L2 from the same initial weights, gains and
/// integrator.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    let stop = StoppingRule::new(cfg.epsilon)?;
    let lyap = flow_for(cfg, LossChoice::Lyapunov, cfg.loss.alpha, cfg.k)?;
    let bound = nominal_bound(cfg, &prep, &lyap)?;
    let integ = integrator_for(cfg, bound.as_ref())?;
    let flows = [
        lyap,
        flow_for(cfg, LossChoice::L1, cfg.loss.alpha, cfg.k)?,
        flow_for(cfg, LossChoice::L2, cfg.loss.alpha, cfg.k)?,
    ];
    let jobs: Vec<Box<dyn FnOnce() -> Result<Finished> + Send + '_>> = flows
        .iter()
        .map(|flow| {
            let (prep, integ, stop, bound) = (&prep, &integ, &stop, &bound);
            Box::new(move || {
                let (traj, wall) = timed(|| integrate(&prep.mlp, &prep.mode, flow, integ, stop))?;
                let b = bound.as_ref().filter(|_| flow.loss.lyapunov().is_some());
                let row = RunRow::from_run(flow.loss.name(), flow, &traj, b, wall);
                Ok(Finished {
                    tag: flow.loss.name().into(),
                    row,
                    traj,
                })
            }) as Box<dyn FnOnce() -> Result<Finished> + Send + '_>
        })
        .collect();
    let runs = run_parallel(jobs)?;
    let mut summary = RunSummary::new("compare");
    summary.rows = runs.iter().map(|f| f.row.clone()).collect();
    summary.extra.push("dt", integ.dt);
    summary.extra.push("t_max", integ.t_max);
    summary.extra.push("epsilon", cfg.epsilon);
    emit(cfg, out, &summary, &runs, false)?;
    Ok(summary)
}

/// Settling bounds over the gain grid `sweep.k` (or `gains.k`), with each
/// bound's ratio to the first.
pub fn cmd_bound(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    let grid = if cfg.sweep.k.is_empty() {
        vec![cfg.k]
    } else {
        cfg.sweep.k.clone()
    };
    let mut summary = RunSummary::new("bound");
    let mut first = None;
    for (i, &k) in grid.iter().enumerate() {
        let flow = flow_for(cfg, LossChoice::Lyapunov, cfg.loss.alpha, k)?;
        let loss = flow.loss.lyapunov().expect("lyapunov flow");
        let e0 = prep.mode.initial_loss(&prep.mlp, &flow.loss)?;
        let (flavor, m) = match cfg.perturb.map(|p| p.mode) {
            Some(PerturbationMode::Vanishing { m, .. }) => (BoundFlavor::Perturbed, Some(m)),
            _ if flow.law == ControlLaw::SingleNeuron => (BoundFlavor::SingleNeuron, None),
            _ => (BoundFlavor::Mlp, None),
        };
        let row_name = format!("k={k}");
        match settling_bound(e0, &flow.gains, &prep.gamma, loss, flavor, m) {
            Ok(mut b) => {
                b.heuristic = cfg.mode == RunMode::Epoch;
                let t0 = *first.get_or_insert(b.t_bound);
                summary.extra.push(format!("row.{i}.ratio"), b.t_bound / t0);
                for e in b.to_kv().entries() {
                    summary.extra.push(format!("row.{i}.{}", e.key), &e.value);
                }
                summary.rows.push(RunRow {
                    name: row_name,
                    loss: "lyapunov".into(),
                    bound: Some(b.t_bound),
                    settle: None,
                    initial_loss: e0,
                    final_loss: e0,
                    wall_secs: 0.0,
                    monotonicity_violations: 0,
                    guaranteed: Some(true),
                    decrease_ok: None,
                    note: format!("{} bound, c = {}", flavor.name(), b.c),
                });
            }
            Err(Error::GuaranteeViolated(msg)) => summary.rows.push(RunRow {
                name: row_name,
                loss: "lyapunov".into(),
                bound: None,
                settle: None,
                initial_loss: e0,
                final_loss: e0,
                wall_secs: 0.0,
                monotonicity_violations: 0,
                guaranteed: Some(false),
                decrease_ok: None,
                note: format!("unguaranteed: {msg}"),
            }),
            Err(e) => return Err(e),
        }
    }
    emit(cfg, out, &summary, &[], false)?;
    Ok(summary)
}

/// Robustness runs over the perturbation bounds `sweep.m`. Rows with
/// `k_min ≤ M` are marked unguaranteed.
pub fn cmd_perturb_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    let flow = flow_for(cfg, cfg.loss.kind, cfg.loss.alpha, cfg.k)?;
    let stop = StoppingRule::new(cfg.epsilon)?;
    let nominal = nominal_bound(cfg, &prep, &flow)?;
    let integ = integrator_for(cfg, nominal.as_ref())?;
    let base = cfg.perturb.map(|p| p.mode).unwrap_or(PerturbationMode::Vanishing {
        m: 0.0,
        alpha: cfg.loss.alpha,
    });
    let ms = if cfg.sweep.m.is_empty() {
        vec![0.1, 0.5, 0.9, 2.0]
    } else {
        cfg.sweep.m.clone()
    };
    let jobs: Vec<Box<dyn FnOnce() -> Result<Finished> + Send + '_>> = ms
        .iter()
        .map(|&m| {
            let mode = match base {
                PerturbationMode::Vanishing { alpha, .. } => PerturbationMode::Vanishing { m, alpha },
                PerturbationMode::Amplitude { .. } => PerturbationMode::Amplitude { m },
            };
            let spec = cfg.perturbation_spec(mode);
            let (prep, flow, integ, stop) = (&prep, &flow, &integ, &stop);
            Box::new(move || {
                let (res, wall) = timed(|| robustness_run(&prep.mlp, &prep.mode, &spec, flow, &prep.gamma, integ, stop))?;
                let mut row = RunRow::from_run(format!("M={m}"), flow, &res.trajectory, res.bound.as_ref(), wall);
                row.guaranteed = Some(res.guaranteed);
                row.note = res.note;
                Ok(Finished {
                    tag: format!("m{m}"),
                    row,
                    traj: res.trajectory,
                })
            }) as Box<dyn FnOnce() -> Result<Finished> + Send + '_>
        })
        .collect();
    let runs = run_parallel(jobs)?;
    let mut summary = RunSummary::new("perturb-sweep");
    summary.rows = runs.iter().map(|f| f.row.clone()).collect();
    summary.extra.push("k_min", flow.gains.k_min());
    summary.extra.push("dt", integ.dt);
    emit(cfg, out, &summary, &runs, false)?;
    Ok(summary)
}

/// Lyapunov runs over `sweep.alpha`, all on the step size and horizon
/// resolved for `loss.alpha`. A run whose loss ever increases is flagged
/// unstable.
pub fn cmd_alpha_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    let stop = StoppingRule::new(cfg.epsilon)?;
    let base_flow = flow_for(cfg, LossChoice::Lyapunov, cfg.loss.alpha, cfg.k)?;
    let integ = integrator_for(cfg, nominal_bound(cfg, &prep, &base_flow)?.as_ref())?;
    let alphas = if cfg.sweep.alpha.is_empty() {
        vec![0.5, 0.7, 0.9]
    } else {
        cfg.sweep.alpha.clone()
    };
    if alphas.contains(&0.0) && !cfg.unsafe_alpha {
        return Err(Error::Config(vec!["sweep.alpha: 0 requires --unsafe-alpha".into()]));
    }
    let jobs: Vec<Box<dyn FnOnce() -> Result<Finished> + Send + '_>> = alphas
        .iter()
        .map(|&alpha| {
            let (prep, integ, stop) = (&prep, &integ, &stop);
            Box::new(move || {
                let flow = flow_for(cfg, LossChoice::Lyapunov, alpha, cfg.k)?;
                let bound = nominal_bound(cfg, prep, &flow)?;
                let (traj, wall) = timed(|| integrate(&prep.mlp, &prep.mode, &flow, integ, stop))?;
                let mut row = RunRow::from_run(format!("alpha={alpha}"), &flow, &traj, bound.as_ref(), wall);
                let mut notes = Vec::new();
                if alpha == 0.0 {
                    notes.push("alpha = 0: discontinuous sign law (instability demo)".to_string());
                }
                if row.monotonicity_violations > 0 {
                    notes.push(format!("unstable: loss increased at {} records", row.monotonicity_violations));
                }
                row.note = notes.join("; ");
                Ok(Finished {
                    tag: format!("alpha{alpha}"),
                    row,
                    traj,
                })
            }) as Box<dyn FnOnce() -> Result<Finished> + Send + '_>
        })
        .collect();
    let runs = run_parallel(jobs)?;
    let mut summary = RunSummary::new("alpha-sweep");
    summary.rows = runs.iter().map(|f| f.row.clone()).collect();
    for (i, f) in runs.iter().enumerate() {
        summary.extra.push(format!("row.{i}.unstable"), f.row.monotonicity_violations > 0);
    }
    summary.extra.push("dt", integ.dt);
    summary.extra.push("method", format!("{:?}", integ.method).to_lowercase());
    emit(cfg, out, &summary, &runs, false)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(sample, layer, row, col)` of the worst weight.
    pub worst: Option<(usize, usize, usize, usize)>,
    pub checked_samples: usize,
    pub skipped_samples: usize,
    pub weights_checked: usize,
}

/// `|a - b| / max(|a|, |b|, GRADCHECK_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_FLOOR)
}

/// Compares backpropagated gradients against central differences on every
/// sample whose output errors all have magnitude at least
/// [`GRADCHECK_MIN_ERROR`].
pub fn gradcheck(mlp: &Mlp, samples: &[(Vec<f64>, Vec<f64>)], loss: &LossKind) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked_samples: 0,
        skipped_samples: 0,
        weights_checked: 0,
    };
    for (s, (x, y)) in samples.iter().enumerate() {
        let trace = forward(mlp, x)?;
        if output_error(&trace, y).iter().any(|e| e.abs() < GRADCHECK_MIN_ERROR) {
            report.skipped_samples += 1;
            continue;
        }
        report.checked_samples += 1;
        let grad = loss_gradient(&sensitivities(mlp, &trace, y, loss)?, &trace)?;
        let mut probe = mlp.clone();
        for (l, g) in grad.iter().enumerate() {
            for j in 0..g.rows() {
                for i in 0..g.cols() {
                    let w = mlp.weights()[l][(j, i)];
                    probe.weights_mut()[l][(j, i)] = w + GRADCHECK_STEP;
                    let up = sample_loss(&probe, x, y, loss)?;
                    probe.weights_mut()[l][(j, i)] = w - GRADCHECK_STEP;
                    let down = sample_loss(&probe, x, y, loss)?;
                    probe.weights_mut()[l][(j, i)] = w;
                    let fd = (up - down) / (2.0 * GRADCHECK_STEP);
                    let rel = relative_error(g[(j, i)], fd);
                    report.weights_checked += 1;
                    if rel > report.max_rel_error || report.worst.is_none() {
                        report.max_rel_error = report.max_rel_error.max(rel);
                        report.worst = Some((s, l, j, i));
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Gradient check on the configured network: the fixed sample in theory
/// mode, the first ten samples in epoch mode.
pub fn cmd_gradcheck(cfg: &ExperimentConfig, out: &Path) -> Result<(GradcheckReport, RunSummary)> {
    let prep = prepare(cfg)?;
    let loss = cfg.loss_kind(cfg.loss.kind, cfg.loss.alpha)?;
    let samples: Vec<(Vec<f64>, Vec<f64>)> = match &prep.mode {
        TrainMode::TheoryFlow { x, y_star } => vec![(x.clone(), y_star.clone())],
        TrainMode::EpochFlow { dataset, .. } => dataset
            .inputs()
            .iter()
            .zip(dataset.targets())
            .take(10)
            .map(|(x, y)| (x.clone(), y.clone()))
            .collect(),
    };
    let report = gradcheck(&prep.mlp, &samples, &loss)?;
    let mut summary = RunSummary::new("gradcheck");
    let kv = &mut summary.extra;
    kv.push("loss", loss.name());
    kv.push("step", GRADCHECK_STEP);
    kv.push("max_rel_error", report.max_rel_error);
    kv.push("checked_samples", report.checked_samples);
    kv.push("skipped_samples", report.skipped_samples);
    kv.push("weights_checked", report.weights_checked);
    if let Some((s, l, j, i)) = report.worst {
        kv.push("worst", format!("sample {s} layer {l} weight ({j}, {i})"));
    }
    kv.push("pass", report.max_rel_error <= 1e-5 && report.checked_samples > 0);
    emit(cfg, out, &summary, &[], false)?;
    Ok((report, summary))
}

/// Default output directory when `--out` is absent.
pub fn default_out_dir(command: &str) -> PathBuf {
    PathBuf::from("runs").join(command)
}
