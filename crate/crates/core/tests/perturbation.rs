use lyapflow::bounds::{verify_decrease, GammaEstimate};
use lyapflow::control::GainSchedule;
use lyapflow::dynamics::{integrate, ControlLaw, Flow, Integrator, Method, StoppingRule, TrainMode};
use lyapflow::loss::{LossKind, LyapunovLoss};
use lyapflow::net::{Activation, Mlp};
use lyapflow::perturb::{robustness_run, PerturbationMode, PerturbationSpec, Perturber};

#[test]
fn vanishing_draws_are_admissible_and_fill_the_bound() {
    let (m, alpha) = (0.2, 0.7);
    let spec = PerturbationSpec::new(PerturbationMode::Vanishing { m, alpha }, 2024).unwrap();
    let x = [0.9, -0.35, 0.05, 1.7, 0.0];
    let bound: Vec<f64> = x.iter().map(|v: &f64| m * v.abs().powf(alpha)).collect();
    let mut p = Perturber::new(spec);
    let mut max = vec![0.0f64; x.len()];
    for _ in 0..100_000 {
        for (i, d) in p.draw(&x).iter().enumerate() {
            assert!(d.abs() <= bound[i], "component {i}: {d} exceeds {}", bound[i]);
            max[i] = max[i].max(d.abs());
        }
    }
    for i in 0..x.len() {
        if bound[i] > 0.0 {
            assert!(max[i] >= 0.95 * bound[i]);
        } else {
            assert_eq!(max[i], 0.0);
        }
    }
}

fn single() -> (Mlp, TrainMode, Flow) {
    let mlp = Mlp::zeros(&[3, 1], Activation::Sigmoid).unwrap();
    let mode = TrainMode::TheoryFlow {
        x: vec![0.8, -0.5, 0.3],
        y_star: vec![0.6],
    };
    let flow = Flow::new(
        LossKind::Lyapunov(LyapunovLoss::single_neuron(0.7).unwrap()),
        ControlLaw::SingleNeuron,
        GainSchedule::scalar(1.0).unwrap(),
    );
    (mlp, mode, flow)
}

#[test]
fn zero_bound_reproduces_the_nominal_run() {
    let (mlp, mode, flow) = single();
    let integ = Integrator::new(Method::Rk4, 1e-5, 0.08).unwrap();
    let stop = StoppingRule::default();
    let nominal = integrate(&mlp, &mode, &flow, &integ, &stop).unwrap();
    let spec = PerturbationSpec::new(PerturbationMode::Vanishing { m: 0.0, alpha: 0.7 }, 1).unwrap();
    let gamma = GammaEstimate::user(0.8).unwrap();
    let run = robustness_run(&mlp, &mode, &spec, &flow, &gamma, &integ, &stop).unwrap();
    assert_eq!(run.trajectory.to_csv(), nominal.to_csv());
}

#[test]
fn guaranteed_run_settles_within_perturbed_bound() {
    let (mlp, mode, flow) = single();
    let spec = PerturbationSpec::new(PerturbationMode::Vanishing { m: 0.5, alpha: 0.7 }, 8).unwrap();
    let gamma = GammaEstimate::user(0.8).unwrap();
    let integ = Integrator::new(Method::Rk4, 1e-5, 0.5).unwrap();
    let run = robustness_run(&mlp, &mode, &spec, &flow, &gamma, &integ, &StoppingRule::default()).unwrap();
    let bound = run.bound.expect("k_min > M gives a bound");
    assert!(run.guaranteed);
    assert!((bound.c - 0.5 * 0.8).abs() < 1e-15);
    assert!(run.trajectory.settled_at.unwrap() <= bound.t_bound);
    assert!(verify_decrease(&run.trajectory, &bound).passed);
}

#[test]
fn dominant_perturbation_is_flagged() {
    let (mlp, mode, flow) = single();
    let gamma = GammaEstimate::user(0.8).unwrap();
    let integ = Integrator::new(Method::Rk4, 1e-4, 0.01).unwrap();
    for mode_p in [
        PerturbationMode::Vanishing { m: 1.0, alpha: 0.7 },
        PerturbationMode::Amplitude { m: 0.1 },
    ] {
        let spec = PerturbationSpec::new(mode_p, 8).unwrap();
        let run = robustness_run(&mlp, &mode, &spec, &flow, &gamma, &integ, &StoppingRule::default()).unwrap();
        assert!(!run.guaranteed);
        assert!(run.bound.is_none());
    }
}
