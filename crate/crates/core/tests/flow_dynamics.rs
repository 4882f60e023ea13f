//! Training-flow behaviour checked against closed forms derived by hand.
//!
//! Single neuron with frozen bias: `dē/dt = σ'(z) Σ x_i u_i = -c sign(ē)`
//! with `c = Σ k|x_i|`, so `|ē|` falls linearly and
//! `E(t) = (|ē0| - c t)^(α+1) / (α+1)` until `t = |ē0|/c`.

use lyapflow::bounds::{settling_bound, verify_decrease, BoundFlavor, GammaEstimate};
use lyapflow::control::GainSchedule;
use lyapflow::dynamics::{integrate, ControlLaw, Flow, Integrator, Method, StoppingRule, TrainMode};
use lyapflow::loss::{LossKind, LyapunovLoss};
use lyapflow::net::{Activation, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const X: [f64; 3] = [0.8, -0.5, 0.3];
const TARGET: f64 = 0.6;
const ALPHA: f64 = 0.7;

fn single() -> (Mlp, TrainMode, Flow) {
    let mlp = Mlp::zeros(&[3, 1], Activation::Sigmoid).unwrap();
    let mode = TrainMode::TheoryFlow {
        x: X.to_vec(),
        y_star: vec![TARGET],
    };
    let flow = Flow::new(
        LossKind::Lyapunov(LyapunovLoss::single_neuron(ALPHA).unwrap()),
        ControlLaw::SingleNeuron,
        GainSchedule::scalar(1.0).unwrap(),
    );
    (mlp, mode, flow)
}

fn exact_loss(t: f64) -> f64 {
    let c: f64 = X.iter().map(|x| x.abs()).sum();
    let e = (0.1 - c * t).max(0.0);
    e.powf(ALPHA + 1.0) / (ALPHA + 1.0)
}

fn exact_settle(eps: f64) -> f64 {
    let c: f64 = X.iter().map(|x| x.abs()).sum();
    (0.1 - ((ALPHA + 1.0) * eps).powf(1.0 / (ALPHA + 1.0))) / c
}

#[test]
fn single_neuron_follows_linear_error_decay() {
    let (mlp, mode, flow) = single();
    let t_exact = 0.1 / 1.6;
    let integ = Integrator::new(Method::Rk4, t_exact / 1e4, 1.5 * t_exact).unwrap();
    let traj = integrate(&mlp, &mode, &flow, &integ, &StoppingRule::default()).unwrap();
    for r in traj.records.iter().filter(|r| r.t <= 0.9 * t_exact) {
        let ex = exact_loss(r.t);
        assert!((r.loss - ex).abs() <= 1e-9 * ex, "t = {}: {} vs {ex}", r.t, r.loss);
    }
    let settle = traj.settled_at.unwrap();
    assert!((settle - exact_settle(1e-9)).abs() <= integ.dt);
    assert!(traj.monotonicity_violations(1e-9).is_empty());
}

#[test]
fn bound_over_true_settle_is_the_exponent_factor() {
    // dE/dt = -(α+1)^β c E^β along the exact flow, so the bound computed
    // with c alone overstates the settling time by (α+1)^β.
    let (mlp, mode, flow) = single();
    let loss = *flow.loss.lyapunov().unwrap();
    let e0 = mode.initial_loss(&mlp, &flow.loss).unwrap();
    let gamma = GammaEstimate::user(1.6).unwrap();
    let b = settling_bound(e0, &flow.gains, &gamma, &loss, BoundFlavor::SingleNeuron, None).unwrap();
    let beta = ALPHA / (ALPHA + 1.0);
    assert!((b.t_bound / (0.1 / 1.6) - (ALPHA + 1.0).powf(beta)).abs() < 1e-12);
}

fn rk4_error(dt: f64, t_eval: f64) -> f64 {
    let (mlp, mode, flow) = single();
    let integ = Integrator::new(Method::Rk4, dt, t_eval).unwrap();
    let traj = integrate(&mlp, &mode, &flow, &integ, &StoppingRule::new(1e-300).unwrap()).unwrap();
    let last = traj.records.last().unwrap();
    assert!((last.t - t_eval).abs() < 1e-12);
    (last.loss - exact_loss(t_eval)).abs()
}

#[test]
fn rk4_is_at_least_third_order() {
    let t_exact = 0.1 / 1.6;
    let t_eval = 0.5 * t_exact;
    let coarse = rk4_error(t_eval / 8.0, t_eval);
    let fine = rk4_error(t_eval / 16.0, t_eval);
    assert!(coarse > 0.0 && fine > 0.0);
    assert!(coarse / fine >= 8.0, "ratio {}", coarse / fine);
}

#[test]
fn euler_is_first_order() {
    let t_exact = 0.1 / 1.6;
    let t_eval = 0.5 * t_exact;
    let err = |dt: f64| {
        let (mlp, mode, flow) = single();
        let integ = Integrator::new(Method::Euler, dt, t_eval).unwrap();
        let traj = integrate(&mlp, &mode, &flow, &integ, &StoppingRule::new(1e-300).unwrap()).unwrap();
        (traj.final_loss() - exact_loss(t_eval)).abs()
    };
    let ratio = err(t_eval / 64.0) / err(t_eval / 128.0);
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

fn mlp_case(seed: u64) -> (Mlp, TrainMode, Flow) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp = Mlp::random(&[4, 8, 1], Activation::Sigmoid, 0.5, &mut rng).unwrap();
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mode = TrainMode::TheoryFlow { x, y_star: vec![0.9] };
    let flow = Flow::new(
        LossKind::Lyapunov(LyapunovLoss::multilayer(ALPHA).unwrap()),
        ControlLaw::Multilayer,
        GainSchedule::scalar(1.0).unwrap(),
    );
    (mlp, mode, flow)
}

#[test]
fn multilayer_flow_decreases_monotonically() {
    for seed in 0..3 {
        let (mlp, mode, flow) = mlp_case(seed);
        let integ = Integrator::new(Method::Rk4, 1e-4, 0.5).unwrap();
        let traj = integrate(&mlp, &mode, &flow, &integ, &StoppingRule::default()).unwrap();
        assert!(traj.monotonicity_violations(1e-9).is_empty());
        assert!(traj.final_loss() < traj.initial_loss());
    }
}

#[test]
fn multilayer_decay_rate_is_weaker_than_unit_gamma_bound() {
    // Σ k|δ_j z_i|^(α+1) is bounded by the output-layer sensitivity, which
    // vanishes with the error; the unit-γ rate cannot hold near settling.
    let (mlp, mode, flow) = mlp_case(1);
    let loss = *flow.loss.lyapunov().unwrap();
    let e0 = mode.initial_loss(&mlp, &flow.loss).unwrap();
    let b = settling_bound(e0, &flow.gains, &GammaEstimate::bias_unit(), &loss, BoundFlavor::Mlp, None).unwrap();
    let integ = Integrator::new(Method::Rk4, b.t_bound / 1e3, b.t_bound).unwrap();
    let traj = integrate(&mlp, &mode, &flow, &integ, &StoppingRule::default()).unwrap();
    assert!(traj.settled_at.is_none());
    assert!(!verify_decrease(&traj, &b).passed);
}

#[test]
fn runs_are_deterministic() {
    let (mlp, mode, flow) = mlp_case(4);
    let integ = Integrator::new(Method::Rk4, 1e-3, 0.2).unwrap();
    let a = integrate(&mlp, &mode, &flow, &integ, &StoppingRule::default()).unwrap();
    let b = integrate(&mlp, &mode, &flow, &integ, &StoppingRule::default()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}
