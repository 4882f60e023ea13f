//! Additive input perturbations and the robustness experiment.
//!
//! Two admissibility classes are supported: the vanishing bound
//! `|Δx_i| ≤ M |x_i|^α`, under which a settling-time bound survives when
//! `k_min > M`, and a plain amplitude bound `|Δx_i| ≤ M`, which carries no
//! guarantee and is reported as empirical only.
//!
//! In a robustness run the loss is measured on the nominal sample while the
//! update law observes the perturbed inputs: the input-layer activations
//! `z_i = x_i` entering the laws are replaced by `x_i + Δx_i`. Deeper layers
//! are unaffected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{settling_bound, BoundFlavor, GammaEstimate, SettlingBound};
use crate::dynamics::{integrate_with_noise, Flow, Integrator, StoppingRule, TrainMode, Trajectory};
use crate::error::{Error, Result};
use crate::net::Mlp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationMode {
    /// `|Δx_i| ≤ m |x_i|^alpha`.
    Vanishing { m: f64, alpha: f64 },
    /// `|Δx_i| ≤ m`.
    Amplitude { m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
    pub seed: u64,
    /// Redraw every `hold_steps` integration steps (1 = every step).
    pub hold_steps: usize,
}

impl PerturbationSpec {
    pub fn new(mode: PerturbationMode, seed: u64) -> Result<Self> {
        let spec = Self {
            mode,
            seed,
            hold_steps: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_hold(mut self, hold_steps: usize) -> Result<Self> {
        self.hold_steps = hold_steps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::invalid("perturb.m", format!("must be finite and >= 0, got {m}")));
        }
        if let PerturbationMode::Vanishing { alpha, .. } = self.mode {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(Error::invalid("perturb.alpha", format!("must be finite and >= 0, got {alpha}")));
            }
        }
        if self.hold_steps == 0 {
            return Err(Error::invalid("perturb.hold", "must be at least 1"));
        }
        Ok(())
    }

    pub fn m(&self) -> f64 {
        match self.mode {
            PerturbationMode::Vanishing { m, .. } | PerturbationMode::Amplitude { m } => m,
        }
    }

    /// Per-component magnitude bound `B_i`.
    pub fn bound(&self, xi: f64) -> f64 {
        match self.mode {
            PerturbationMode::Vanishing { m, alpha } => {
                if xi == 0.0 {
                    0.0
                } else {
                    m * xi.abs().powf(alpha)
                }
            }
            PerturbationMode::Amplitude { m } => m,
        }
    }

    pub fn is_vanishing(&self) -> bool {
        matches!(self.mode, PerturbationMode::Vanishing { .. })
    }
}

/// Stateful perturbation stream. Each draw is `B_i · u_i` with `u_i`
/// uniform on `[-1, 1)`, so admissibility holds by construction.
#[derive(Debug, Clone)]
pub struct Perturber {
    spec: PerturbationSpec,
    rng: ChaCha8Rng,
    unit: Vec<f64>,
    age: usize,
}

impl Perturber {
    pub fn new(spec: PerturbationSpec) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            unit: Vec::new(),
            age: 0,
        }
    }

    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    /// Perturbation for `x` at the current step; redraws according to the hold setting.
    pub fn draw(&mut self, x: &[f64]) -> Vec<f64> {
        if self.age % self.spec.hold_steps == 0 || self.unit.len() != x.len() {
            self.unit.clear();
            let rng = &mut self.rng;
            self.unit.extend((0..x.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0));
        }
        self.age += 1;
        x.iter().zip(&self.unit).map(|(&xi, &u)| self.spec.bound(xi) * u).collect()
    }

    /// `x + Δx`.
    pub fn observe(&mut self, x: &[f64]) -> Vec<f64> {
        let dx = self.draw(x);
        x.iter().zip(&dx).map(|(a, d)| a + d).collect()
    }
}

/// One perturbed copy of `x`, deterministic in `spec.seed`.
pub fn perturb_input(x: &[f64], spec: &PerturbationSpec) -> Vec<f64> {
    Perturber::new(*spec).observe(x)
}

#[derive(Debug, Clone)]
pub struct RobustnessOutcome {
    pub trajectory: Trajectory,
    /// Present only when the run is covered by a guarantee.
    pub bound: Option<SettlingBound>,
    pub guaranteed: bool,
    pub note: String,
}

/// Integrates with perturbed observed inputs and, when the vanishing bound
/// applies with `k_min > M`, attaches the perturbed settling-time bound.
#[allow(clippy::too_many_arguments)]
pub fn robustness_run(
    mlp: &Mlp,
    mode: &TrainMode,
    spec: &PerturbationSpec,
    flow: &Flow,
    gamma: &GammaEstimate,
    integ: &Integrator,
    stop: &StoppingRule,
) -> Result<RobustnessOutcome> {
    spec.validate()?;
    let (bound, guaranteed, note) = perturbed_bound(mlp, mode, spec, flow, gamma)?;
    let mut perturber = Perturber::new(*spec);
    let trajectory = integrate_with_noise(mlp, mode, flow, integ, stop, Some(&mut perturber))?;
    Ok(RobustnessOutcome {
        trajectory,
        bound,
        guaranteed,
        note,
    })
}

fn perturbed_bound(
    mlp: &Mlp,
    mode: &TrainMode,
    spec: &PerturbationSpec,
    flow: &Flow,
    gamma: &GammaEstimate,
) -> Result<(Option<SettlingBound>, bool, String)> {
    let Some(loss) = flow.loss.lyapunov() else {
        return Ok((None, false, "baseline loss: no guarantee".into()));
    };
    if !spec.is_vanishing() {
        return Ok((None, false, "amplitude-bounded noise: empirical only".into()));
    }
    let e0 = mode.initial_loss(mlp, &flow.loss)?;
    if e0 == 0.0 {
        return Ok((None, true, "already settled at t = 0".into()));
    }
    match settling_bound(e0, &flow.gains, gamma, loss, BoundFlavor::Perturbed, Some(spec.m())) {
        Ok(b) => Ok((Some(b), true, "vanishing bound with k_min > M".into())),
        Err(Error::GuaranteeViolated(msg)) => Ok((None, false, format!("unguaranteed: {msg}"))),
        Err(e) => Err(e),
    }
}
