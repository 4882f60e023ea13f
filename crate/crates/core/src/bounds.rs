//! A priori settling-time bounds and their check along trajectories.
//!
//! Every law here ends in a differential inequality `dE/dt ≤ -c E^β` with
//! `c > 0` and `0 < β < 1`. Separating variables,
//! `d(E^(1-β))/dt ≤ -c (1-β)`, so `E` reaches zero no later than
//! `T = E0^(1-β) / (c (1-β))`. The flavors differ only in `c`:
//!
//! | flavor        | c                    | β            |
//! |---------------|----------------------|--------------|
//! | single neuron | `k_min γ`            | `α/(α+1)`    |
//! | multi-layer   | `k_min γ^(α+1)`      | configured   |
//! | perturbed     | `(k_min - M) γ`      | configured   |

use std::fmt::Write as _;

use crate::control::GainSchedule;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::kv::{opt_f64, KvDoc};
use crate::loss::LyapunovLoss;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundFlavor {
    SingleNeuron,
    Mlp,
    Perturbed,
}

impl BoundFlavor {
    pub fn name(self) -> &'static str {
        match self {
            BoundFlavor::SingleNeuron => "single-neuron",
            BoundFlavor::Mlp => "mlp",
            BoundFlavor::Perturbed => "perturbed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSource {
    /// The embedded bias activation, identically 1.
    BiasUnit,
    /// Smallest per-sample largest input magnitude.
    DataMin,
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub source: GammaSource,
    /// Largest input magnitude seen, when a dataset was scanned.
    pub input_bound: Option<f64>,
}

impl GammaEstimate {
    pub fn bias_unit() -> Self {
        Self {
            gamma: 1.0,
            source: GammaSource::BiasUnit,
            input_bound: None,
        }
    }

    pub fn user(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("must be finite and > 0, got {gamma}")));
        }
        Ok(Self {
            gamma,
            source: GammaSource::UserSupplied,
            input_bound: None,
        })
    }
}

/// Estimates `γ` from input samples. `DataMin` takes `min_s max_i |x_i|`;
/// `BiasUnit` returns 1. Both report `max_{s,i} |x_i|`. `UserSupplied` is
/// not an estimation mode and is rejected here.
pub fn estimate_gamma(inputs: &[Vec<f64>], source: GammaSource) -> Result<GammaEstimate> {
    if inputs.is_empty() {
        return Err(Error::invalid("dataset", "gamma estimation needs at least one sample"));
    }
    let mut a = 0.0f64;
    let mut gamma = f64::INFINITY;
    let mut zero_row = None;
    for (s, x) in inputs.iter().enumerate() {
        let row_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a = a.max(row_max);
        gamma = gamma.min(row_max);
        if row_max == 0.0 && zero_row.is_none() {
            zero_row = Some(s);
        }
    }
    match source {
        GammaSource::BiasUnit => Ok(GammaEstimate {
            gamma: 1.0,
            source,
            input_bound: Some(a),
        }),
        GammaSource::DataMin => {
            if let Some(s) = zero_row {
                return Err(Error::AssumptionViolated(format!(
                    "sample {s} has all-zero inputs and no bias unit supplies a nonzero input"
                )));
            }
            Ok(GammaEstimate {
                gamma,
                source,
                input_bound: Some(a),
            })
        }
        GammaSource::UserSupplied => Err(Error::invalid("gamma", "user-supplied gamma is not estimated")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettlingBound {
    pub e0: f64,
    pub c: f64,
    pub beta: f64,
    pub t_bound: f64,
    pub flavor: BoundFlavor,
    pub gamma: f64,
    pub k_min: f64,
    pub m: Option<f64>,
    /// Set when `E0` is a dataset sum rather than a single-sample loss.
    pub heuristic: bool,
}

impl SettlingBound {
    /// Analytic first zero of `dE/dt = -c E^β` from `E(0) = e0`.
    pub fn time(e0: f64, c: f64, beta: f64) -> f64 {
        e0.powf(1.0 - beta) / (c * (1.0 - beta))
    }

    /// Value of the comparison solution `(E0^(1-β) - c (1-β) t)^(1/(1-β))`, zero after `T`.
    pub fn envelope(&self, t: f64) -> f64 {
        let base = self.e0.powf(1.0 - self.beta) - self.c * (1.0 - self.beta) * t;
        if base <= 0.0 {
            0.0
        } else {
            base.powf(1.0 / (1.0 - self.beta))
        }
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.push("flavor", self.flavor.name());
        doc.push("E0", self.e0);
        doc.push("c", self.c);
        doc.push("beta", self.beta);
        doc.push("gamma", self.gamma);
        doc.push("k_min", self.k_min);
        doc.push("M", opt_f64(self.m));
        doc.push("T", self.t_bound);
        doc.push("heuristic", self.heuristic);
        doc
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "settling-time bound ({})", self.flavor.name());
        let rows = [
            ("E0", self.e0.to_string()),
            ("c", self.c.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("k_min", self.k_min.to_string()),
            ("M", opt_f64(self.m)),
            ("T", self.t_bound.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "  {k:<6} {v}");
        }
        if self.heuristic {
            out.push_str("  (heuristic: E0 is a dataset sum; the guarantee is per sample)\n");
        }
        out
    }
}

pub fn settling_bound(
    e0: f64,
    gains: &GainSchedule,
    gamma: &GammaEstimate,
    loss: &LyapunovLoss,
    flavor: BoundFlavor,
    m: Option<f64>,
) -> Result<SettlingBound> {
    if !(e0.is_finite() && e0 > 0.0) {
        return Err(Error::invalid("E0", format!("must be finite and > 0, got {e0}")));
    }
    if !(gamma.gamma.is_finite() && gamma.gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be finite and > 0, got {}", gamma.gamma)));
    }
    let k_min = gains.k_min();
    let alpha = loss.alpha();
    let (c, beta) = match flavor {
        BoundFlavor::SingleNeuron => (k_min * gamma.gamma, alpha / (alpha + 1.0)),
        BoundFlavor::Mlp => (k_min * gamma.gamma.powf(alpha + 1.0), loss.beta()),
        BoundFlavor::Perturbed => {
            let m = m.ok_or_else(|| Error::invalid("M", "perturbed bound needs the perturbation bound M"))?;
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::invalid("M", format!("must be finite and >= 0, got {m}")));
            }
            if k_min <= m {
                return Err(Error::GuaranteeViolated(format!("k_min = {k_min} does not exceed M = {m}")));
            }
            ((k_min - m) * gamma.gamma, loss.beta())
        }
    };
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("beta", format!("bound needs 0 < beta < 1, got {beta}")));
    }
    Ok(SettlingBound {
        e0,
        c,
        beta,
        t_bound: SettlingBound::time(e0, c, beta),
        flavor,
        gamma: gamma.gamma,
        k_min,
        m: if flavor == BoundFlavor::Perturbed { m } else { None },
        heuristic: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseCheck {
    pub t: f64,
    pub loss: f64,
    pub slope: f64,
    /// `-c E^β`.
    pub required: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseReport {
    pub checks: Vec<DecreaseCheck>,
    pub passed: bool,
}

impl DecreaseReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }
}

/// Checks the central-difference slope at every interior record against
/// `-c E^β`, with slack `1e-6 (1 + c E^β)`. Trajectories with fewer than
/// three records yield an empty, non-passing report.
pub fn verify_decrease(traj: &Trajectory, bound: &SettlingBound) -> DecreaseReport {
    let r = &traj.records;
    let checks: Vec<DecreaseCheck> = r
        .windows(3)
        .map(|w| {
            let slope = (w[2].loss - w[0].loss) / (w[2].t - w[0].t);
            let rate = bound.c * w[1].loss.max(0.0).powf(bound.beta);
            let slack = 1e-6 * (1.0 + rate);
            DecreaseCheck {
                t: w[1].t,
                loss: w[1].loss,
                slope,
                required: -rate,
                pass: slope <= -rate + slack,
            }
        })
        .collect();
    let passed = !checks.is_empty() && checks.iter().all(|c| c.pass);
    DecreaseReport { checks, passed }
}
