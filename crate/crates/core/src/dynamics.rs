//! Time integration of the weight flow `dw/dt = u(w)`.
//!
//! Theory flow integrates against one fixed sample with Euler or classic RK4,
//! re-evaluating forward pass, sensitivities and control law at every stage.
//! Epoch flow takes one Euler step of size `dt` per sample while cycling the
//! dataset and records the dataset-summed loss once per epoch; it mirrors the
//! usual training protocol and carries no finite-time guarantee.

use std::borrow::Cow;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{baseline_update, mlp_update, single_neuron_update, ControlSignal, GainSchedule};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::net::{forward, loss_gradient, output_error, sensitivities, Mlp};
use crate::perturb::Perturber;

pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub method: Method,
    pub dt: f64,
    pub t_max: f64,
    pub step_budget: u64,
    /// Record every `record_stride` steps (theory flow) or epochs (epoch flow).
    pub record_stride: usize,
}

impl Integrator {
    pub fn new(method: Method, dt: f64, t_max: f64) -> Result<Self> {
        let i = Self {
            method,
            dt,
            t_max,
            step_budget: DEFAULT_STEP_BUDGET,
            record_stride: 1,
        };
        i.validate()?;
        Ok(i)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("integrator.dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::invalid("integrator.t_max", format!("must be finite and > 0, got {}", self.t_max)));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("integrator.record_stride", "must be at least 1"));
        }
        Ok(())
    }

    /// Number of steps needed to cover `t_max`.
    pub fn steps(&self) -> u64 {
        let ratio = self.t_max / self.dt;
        // Absorb rounding so that t_max = 10 * dt gives 10 steps.
        (ratio - 1e-9 * ratio.max(1.0)).ceil().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub epsilon: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl StoppingRule {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid("stop.epsilon", format!("must be finite and > 0, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOrder {
    Sequential,
    /// Reshuffled every epoch from `seed + epoch`.
    Shuffled(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainMode {
    TheoryFlow { x: Vec<f64>, y_star: Vec<f64> },
    EpochFlow { dataset: Dataset, order: SampleOrder },
}

impl TrainMode {
    /// Loss at the starting weights: the sample loss for theory flow, the
    /// dataset-summed loss for epoch flow.
    pub fn initial_loss(&self, mlp: &Mlp, loss: &LossKind) -> Result<f64> {
        match self {
            TrainMode::TheoryFlow { x, y_star } => Ok(loss.eval(&output_error(&forward(mlp, x)?, y_star))),
            TrainMode::EpochFlow { dataset, .. } => Ok(dataset_loss(mlp, dataset, loss)?.0),
        }
    }

    fn check(&self, mlp: &Mlp) -> Result<()> {
        let (n, m) = match self {
            TrainMode::TheoryFlow { x, y_star } => (x.len(), y_star.len()),
            TrainMode::EpochFlow { dataset, .. } => {
                if dataset.is_empty() {
                    return Err(Error::invalid("dataset", "epoch flow needs at least one sample"));
                }
                (dataset.input_dim(), dataset.target_dim())
            }
        };
        if n != mlp.inputs() {
            return Err(Error::Shape {
                context: "training inputs",
                expected: mlp.inputs(),
                actual: n,
            });
        }
        if m != mlp.outputs() {
            return Err(Error::Shape {
                context: "training targets",
                expected: mlp.outputs(),
                actual: m,
            });
        }
        Ok(())
    }
}

/// Which weight-rate law drives a Lyapunov run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlLaw {
    /// Single sigmoid unit, bias frozen.
    SingleNeuron,
    /// Layer-wise law on every weight including biases.
    Multilayer,
}

impl ControlLaw {
    pub fn for_network(mlp: &Mlp) -> Self {
        if mlp.is_single_neuron() {
            ControlLaw::SingleNeuron
        } else {
            ControlLaw::Multilayer
        }
    }
}

/// Loss, law and gains of one training run. In single-neuron mode the
/// baseline losses also leave the bias untouched, so every loss trains the
/// same parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub loss: LossKind,
    pub law: ControlLaw,
    pub gains: GainSchedule,
}

impl Flow {
    pub fn new(loss: LossKind, law: ControlLaw, gains: GainSchedule) -> Self {
        Self { loss, law, gains }
    }

    fn check(&self, mlp: &Mlp) -> Result<()> {
        if self.law == ControlLaw::SingleNeuron && !mlp.is_single_neuron() {
            return Err(Error::Mode(format!(
                "single-neuron law on a network with layer sizes {:?}",
                mlp.sizes()
            )));
        }
        Ok(())
    }
}

/// State of the flow at one weight vector.
#[derive(Debug, Clone)]
pub struct FlowEval {
    pub loss: f64,
    pub e_bar: Vec<f64>,
    pub control: ControlSignal,
}

/// Evaluates loss and control at `mlp`. `observed`, when given, replaces
/// the input seen by the update law; the loss always uses `x`.
pub fn evaluate(mlp: &Mlp, x: &[f64], observed: Option<&[f64]>, y_star: &[f64], flow: &Flow) -> Result<FlowEval> {
    let trace = forward(mlp, x)?;
    let e_bar = output_error(&trace, y_star);
    let loss = flow.loss.eval(&e_bar);
    let seen = match observed {
        Some(o) => Cow::Owned(trace.with_observed_input(o)),
        None => Cow::Borrowed(&trace),
    };
    let control = match (flow.loss, flow.law) {
        (LossKind::Lyapunov(_), ControlLaw::SingleNeuron) => {
            single_neuron_update(seen.input(), e_bar[0], trace.a[0][0], &flow.gains)?
        }
        (LossKind::Lyapunov(l), ControlLaw::Multilayer) => {
            let deltas = sensitivities(mlp, &trace, y_star, &flow.loss)?;
            mlp_update(&deltas, &seen, loss, &flow.gains, &l)?
        }
        (LossKind::L1 | LossKind::L2, law) => {
            let deltas = sensitivities(mlp, &trace, y_star, &flow.loss)?;
            let mut grad = loss_gradient(&deltas, &seen)?;
            if law == ControlLaw::SingleNeuron {
                let bias = grad[0].cols() - 1;
                grad[0][(0, bias)] = 0.0;
            }
            baseline_update(&grad, &flow.gains)?
        }
    };
    Ok(FlowEval { loss, e_bar, control })
}

/// Dataset-summed loss and mean absolute error per output.
pub fn dataset_loss(mlp: &Mlp, ds: &Dataset, loss: &LossKind) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut mae = vec![0.0; mlp.outputs()];
    for (x, y) in ds.inputs().iter().zip(ds.targets()) {
        let e = output_error(&forward(mlp, x)?, y);
        total += loss.eval(&e);
        for (acc, v) in mae.iter_mut().zip(&e) {
            *acc += v.abs();
        }
    }
    let n = ds.len().max(1) as f64;
    mae.iter_mut().for_each(|v| *v /= n);
    Ok((total, mae))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub loss: f64,
    /// Theory flow: signed output errors. Epoch flow: mean absolute error per output.
    pub e_bar: Vec<f64>,
    pub control_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub settled_at: Option<f64>,
    pub final_mlp: Mlp,
    pub epsilon: f64,
    pub steps: u64,
}

impl Trajectory {
    pub fn initial_loss(&self) -> f64 {
        self.records[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Record indices `n` with `E_{n+1} > E_n + slack·(1 + E_n)`.
    pub fn monotonicity_violations(&self, slack: f64) -> Vec<usize> {
        self.records
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].loss > w[0].loss + slack * (1.0 + w[0].loss))
            .map(|(n, _)| n)
            .collect()
    }

    /// First record time at which `E ≤ threshold`, interpolated as in [`detect_settle`].
    pub fn time_to_reach(&self, threshold: f64) -> Option<f64> {
        crossing_time(&self.records, threshold)
    }

    /// CSV with header `t,E,settle_flag,control_norm,e_bar_0,...`.
    pub fn to_csv(&self) -> String {
        let outputs = self.records.first().map_or(0, |r| r.e_bar.len());
        let mut out = String::from("t,E,settle_flag,control_norm");
        for m in 0..outputs {
            let _ = write!(out, ",e_bar_{m}");
        }
        out.push('\n');
        for r in &self.records {
            let flag = u8::from(r.loss <= self.epsilon);
            let _ = write!(out, "{},{},{},{}", r.t, r.loss, flag, r.control_norm);
            for e in &r.e_bar {
                let _ = write!(out, ",{e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the CSV written by [`Trajectory::to_csv`] back into records.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<Record>> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::EmptyFile {
            source_name: "trajectory".into(),
        });
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..4] != ["t", "E", "settle_flag", "control_norm"] {
        return Err(Error::Syntax {
            line: 1,
            message: "expected header `t,E,settle_flag,control_norm,...`".into(),
        });
    }
    for (m, c) in cols[4..].iter().enumerate() {
        if *c != format!("e_bar_{m}") {
            return Err(Error::Syntax {
                line: 1,
                message: format!("unexpected column `{c}`"),
            });
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Syntax {
                line: idx + 1,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Syntax {
                line: idx + 1,
                message: format!("not a number: `{s}`"),
            })
        };
        records.push(Record {
            t: num(fields[0])?,
            loss: num(fields[1])?,
            control_norm: num(fields[3])?,
            e_bar: fields[4..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        });
    }
    Ok(records)
}

fn crossing_time(records: &[Record], eps: f64) -> Option<f64> {
    let idx = records.iter().position(|r| r.loss <= eps)?;
    if idx == 0 {
        return Some(records[0].t);
    }
    let (a, b) = (&records[idx - 1], &records[idx]);
    let frac = (a.loss - eps) / (a.loss - b.loss);
    Some(a.t + frac * (b.t - a.t))
}

/// First crossing of `E ≤ ε`, linearly interpolated between the bracketing records.
pub fn detect_settle(traj: &Trajectory, stop: &StoppingRule) -> Option<f64> {
    crossing_time(&traj.records, stop.epsilon)
}

pub fn integrate(mlp: &Mlp, mode: &TrainMode, flow: &Flow, integ: &Integrator, stop: &StoppingRule) -> Result<Trajectory> {
    integrate_with_noise(mlp, mode, flow, integ, stop, None)
}

/// [`integrate`] with an optional perturbation stream on the inputs seen by
/// the update law. The perturbation is drawn once per step and held across
/// RK4 stages.
pub fn integrate_with_noise(
    mlp: &Mlp,
    mode: &TrainMode,
    flow: &Flow,
    integ: &Integrator,
    stop: &StoppingRule,
    noise: Option<&mut Perturber>,
) -> Result<Trajectory> {
    integ.validate()?;
    mode.check(mlp)?;
    flow.check(mlp)?;
    match mode {
        TrainMode::TheoryFlow { x, y_star } => theory_flow(mlp, x, y_star, flow, integ, stop, noise),
        TrainMode::EpochFlow { dataset, order } => epoch_flow(mlp, dataset, *order, flow, integ, stop, noise),
    }
}

fn record(t: f64, ev: &FlowEval) -> Record {
    Record {
        t,
        loss: ev.loss,
        e_bar: ev.e_bar.clone(),
        control_norm: ev.control.norm(),
    }
}

fn theory_flow(
    mlp: &Mlp,
    x: &[f64],
    y_star: &[f64],
    flow: &Flow,
    integ: &Integrator,
    stop: &StoppingRule,
    mut noise: Option<&mut Perturber>,
) -> Result<Trajectory> {
    let steps = integ.steps();
    if steps > integ.step_budget {
        return Err(Error::Horizon {
            steps,
            budget: integ.step_budget,
        });
    }
    let dt = integ.dt;
    let mut w = mlp.clone();
    let mut observed = noise.as_deref_mut().map(|p| p.observe(x));
    let mut ev = evaluate(&w, x, observed.as_deref(), y_star, flow)?;
    if !ev.loss.is_finite() || !ev.control.is_finite() {
        return Err(Error::Divergence { t: 0.0 });
    }
    let mut records = vec![record(0.0, &ev)];
    let mut taken = 0;
    if ev.loss > stop.epsilon {
        for n in 1..=steps {
            let obs = observed.as_deref();
            match integ.method {
                Method::Euler => w.add_scaled(dt, ev.control.rates()),
                Method::Rk4 => {
                    let k1 = &ev.control;
                    let mut w2 = w.clone();
                    w2.add_scaled(0.5 * dt, k1.rates());
                    let k2 = evaluate(&w2, x, obs, y_star, flow)?.control;
                    let mut w3 = w.clone();
                    w3.add_scaled(0.5 * dt, k2.rates());
                    let k3 = evaluate(&w3, x, obs, y_star, flow)?.control;
                    let mut w4 = w.clone();
                    w4.add_scaled(dt, k3.rates());
                    let k4 = evaluate(&w4, x, obs, y_star, flow)?.control;
                    w.add_scaled(dt / 6.0, k1.rates());
                    w.add_scaled(dt / 3.0, k2.rates());
                    w.add_scaled(dt / 3.0, k3.rates());
                    w.add_scaled(dt / 6.0, k4.rates());
                }
            }
            let t = n as f64 * dt;
            taken = n;
            if !w.is_finite() {
                return Err(Error::Divergence { t });
            }
            observed = noise.as_deref_mut().map(|p| p.observe(x));
            ev = evaluate(&w, x, observed.as_deref(), y_star, flow)?;
            if !ev.loss.is_finite() || !ev.control.is_finite() {
                return Err(Error::Divergence { t });
            }
            let settled = ev.loss <= stop.epsilon;
            if settled || n % integ.record_stride as u64 == 0 || n == steps {
                records.push(record(t, &ev));
            }
            if settled {
                break;
            }
        }
    }
    let settled_at = crossing_time(&records, stop.epsilon);
    Ok(Trajectory {
        records,
        settled_at,
        final_mlp: w,
        epsilon: stop.epsilon,
        steps: taken,
    })
}

fn epoch_flow(
    mlp: &Mlp,
    ds: &Dataset,
    order: SampleOrder,
    flow: &Flow,
    integ: &Integrator,
    stop: &StoppingRule,
    mut noise: Option<&mut Perturber>,
) -> Result<Trajectory> {
    let n = ds.len();
    let epoch_time = integ.dt * n as f64;
    let epochs = (integ.t_max / epoch_time - 1e-9).ceil().max(1.0) as u64;
    let steps = epochs.saturating_mul(n as u64);
    if steps > integ.step_budget {
        return Err(Error::Horizon {
            steps,
            budget: integ.step_budget,
        });
    }
    let mut w = mlp.clone();
    let epoch_record = |w: &Mlp, t: f64, control_norm: f64| -> Result<Record> {
        let (loss, e_bar) = dataset_loss(w, ds, &flow.loss)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { t });
        }
        Ok(Record {
            t,
            loss,
            e_bar,
            control_norm,
        })
    };
    let mut initial_norm_sq = 0.0;
    for (x, y) in ds.inputs().iter().zip(ds.targets()) {
        initial_norm_sq += evaluate(&w, x, None, y, flow)?.control.norm().powi(2);
    }
    let mut records = vec![epoch_record(&w, 0.0, (initial_norm_sq / n as f64).sqrt())?];
    let mut idx: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;
    if records[0].loss > stop.epsilon {
        for epoch in 1..=epochs {
            if let SampleOrder::Shuffled(seed) = order {
                idx.sort_unstable();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch)));
            }
            let mut norm_sq = 0.0;
            for &i in &idx {
                let (x, y) = ds.sample(i);
                let observed = noise.as_deref_mut().map(|p| p.observe(x));
                let ev = evaluate(&w, x, observed.as_deref(), y, flow)?;
                w.add_scaled(integ.dt, ev.control.rates());
                step += 1;
                if !w.is_finite() {
                    return Err(Error::Divergence {
                        t: step as f64 * integ.dt,
                    });
                }
                norm_sq += ev.control.norm().powi(2);
            }
            let t = step as f64 * integ.dt;
            let rec = epoch_record(&w, t, (norm_sq / n as f64).sqrt())?;
            let settled = rec.loss <= stop.epsilon;
            if settled || epoch % integ.record_stride as u64 == 0 || epoch == epochs {
                records.push(rec);
            }
            if settled {
                break;
            }
        }
    }
    let settled_at = crossing_time(&records, stop.epsilon);
    Ok(Trajectory {
        records,
        settled_at,
        final_mlp: w,
        epsilon: stop.epsilon,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LyapunovLoss;
    use crate::matrix::Matrix;
    use crate::net::Activation;

    fn rec(t: f64, loss: f64) -> Record {
        Record {
            t,
            loss,
            e_bar: vec![0.0],
            control_norm: 0.0,
        }
    }

    fn traj(records: Vec<Record>) -> Trajectory {
        Trajectory {
            records,
            settled_at: None,
            final_mlp: Mlp::zeros(&[1, 1], Activation::Sigmoid).unwrap(),
            epsilon: 1e-9,
            steps: 0,
        }
    }

    #[test]
    fn detect_settle_cases() {
        let stop = StoppingRule::default();
        let never = traj(vec![rec(0.0, 1.0), rec(1.0, 0.5), rec(2.0, 1e-8)]);
        assert_eq!(detect_settle(&never, &stop), None);
        let lin = traj(vec![rec(0.0, 2e-9), rec(1.0, 0.0)]);
        assert_eq!(detect_settle(&lin, &stop), Some(0.5));
        let first = traj(vec![rec(0.0, 0.0)]);
        assert_eq!(detect_settle(&first, &stop), Some(0.0));
    }

    #[test]
    fn step_count_and_validation() {
        assert_eq!(Integrator::new(Method::Rk4, 0.1, 1.0).unwrap().steps(), 10);
        assert_eq!(Integrator::new(Method::Rk4, 0.3, 1.0).unwrap().steps(), 4);
        assert!(Integrator::new(Method::Rk4, 0.0, 1.0).is_err());
        assert!(Integrator::new(Method::Rk4, 0.1, -1.0).is_err());
        assert!(StoppingRule::new(0.0).is_err());
    }

    fn single(w: &[f64]) -> Mlp {
        Mlp::from_weights(&[w.len() - 1, 1], vec![Matrix::from_rows(&[w.to_vec()])], Activation::Sigmoid).unwrap()
    }

    fn lyap_flow(alpha: f64) -> Flow {
        Flow::new(
            LossKind::Lyapunov(LyapunovLoss::single_neuron(alpha).unwrap()),
            ControlLaw::SingleNeuron,
            GainSchedule::scalar(1.0).unwrap(),
        )
    }

    #[test]
    fn already_settled_start() {
        let m = single(&[0.0, 0.0]);
        let mode = TrainMode::TheoryFlow {
            x: vec![1.0],
            y_star: vec![0.5],
        };
        let t = integrate(&m, &mode, &lyap_flow(0.7), &Integrator::new(Method::Rk4, 1e-3, 1.0).unwrap(), &StoppingRule::default()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.settled_at, Some(0.0));
    }

    #[test]
    fn horizon_and_mode_errors() {
        let m = single(&[0.0, 0.0]);
        let mode = TrainMode::TheoryFlow {
            x: vec![1.0],
            y_star: vec![0.9],
        };
        let mut integ = Integrator::new(Method::Euler, 1e-3, 10.0).unwrap();
        integ.step_budget = 100;
        assert!(matches!(
            integrate(&m, &mode, &lyap_flow(0.7), &integ, &StoppingRule::default()),
            Err(Error::Horizon { steps: 10_000, budget: 100 })
        ));
        let deep = Mlp::zeros(&[1, 2, 1], Activation::Sigmoid).unwrap();
        assert!(matches!(
            integrate(&deep, &mode, &lyap_flow(0.7), &Integrator::new(Method::Euler, 1e-2, 1.0).unwrap(), &StoppingRule::default()),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn divergence_is_reported_with_time() {
        // Huge baseline gain blows the weights up within a few Euler steps.
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(1);
        let m = Mlp::random(&[1, 2, 1], Activation::Identity, 0.5, &mut rng).unwrap();
        let flow = Flow::new(LossKind::L2, ControlLaw::Multilayer, GainSchedule::scalar(1e150).unwrap());
        let mode = TrainMode::TheoryFlow {
            x: vec![1.0],
            y_star: vec![100.0],
        };
        let r = integrate(&m, &mode, &flow, &Integrator::new(Method::Euler, 1.0, 100.0).unwrap(), &StoppingRule::default());
        assert!(matches!(r, Err(Error::Divergence { t }) if t > 0.0), "{r:?}");
    }

    #[test]
    fn csv_round_trip() {
        let m = single(&[0.3, -0.2, 0.0]);
        let mode = TrainMode::TheoryFlow {
            x: vec![1.0, 0.5],
            y_star: vec![0.6],
        };
        let t = integrate(&m, &mode, &lyap_flow(0.7), &Integrator::new(Method::Rk4, 1e-3, 0.05).unwrap(), &StoppingRule::default()).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("t,E,settle_flag,control_norm,e_bar_0\n"));
        assert_eq!(parse_trajectory_csv(&csv).unwrap(), t.records);
    }
}
