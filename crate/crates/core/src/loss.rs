//! Lyapunov loss and the L1/L2 baselines.
//!
//! The Lyapunov loss of an output error vector `e` is
//! `E = Σ_m |e_m|^(α+1) / (α+1)`, whose error-gradient is the odd power map
//! `sgnpow(e_m, α)`. Weight-rate laws built on it are non-Lipschitz at the
//! origin for `α < 1`, which is what produces finite-time convergence.

use crate::error::{Error, Result};

/// Default exponent, the middle of the empirically stable range (0.5, 0.9).
pub const DEFAULT_ALPHA: f64 = 0.7;

/// `sign(v) * |v|^p`, with `sign(0) = 0`.
pub fn sgnpow(v: f64, p: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else if p == 0.0 {
        v.signum()
    } else if p == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(p)
    }
}

/// Exponents of the Lyapunov loss.
///
/// `alpha` shapes the loss itself; `beta` is the exponent on `E` in the
/// multi-layer weight-update law and in the decay inequality `dE/dt ≤ -c E^β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovLoss {
    alpha: f64,
    beta: f64,
}

impl LyapunovLoss {
    /// Single-neuron theory mode: `β = α/(α+1)`.
    pub fn single_neuron(alpha: f64) -> Result<Self> {
        check_open_unit("alpha", alpha)?;
        Ok(Self {
            alpha,
            beta: alpha / (alpha + 1.0),
        })
    }

    /// Multi-layer mode with the default `β = min(α/(α+1), 0.999(1-α))`,
    /// which keeps `α + β < 1`.
    pub fn multilayer(alpha: f64) -> Result<Self> {
        check_open_unit("alpha", alpha)?;
        Self::multilayer_with_beta(alpha, default_multilayer_beta(alpha))
    }

    pub fn multilayer_with_beta(alpha: f64, beta: f64) -> Result<Self> {
        check_open_unit("alpha", alpha)?;
        check_open_unit("beta", beta)?;
        if alpha + beta >= 1.0 {
            return Err(Error::invalid(
                "beta",
                format!("alpha + beta must be < 1 (got {alpha} + {beta})"),
            ));
        }
        Ok(Self { alpha, beta })
    }

    /// Accepts `α ∈ [0, 1)` and `β ∈ [0, 1)`. Only for reproducing the
    /// `α = 0` instability, where the loss gradient degenerates to a signum.
    pub fn unsafe_exponents(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1), got {v}")));
            }
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `E = Σ |e_m|^(α+1) / (α+1)`.
    pub fn eval(&self, e_bar: &[f64]) -> f64 {
        let p = self.alpha + 1.0;
        e_bar.iter().map(|e| e.abs().powf(p)).sum::<f64>() / p
    }

    /// `∂E/∂e_m = sgnpow(e_m, α)`.
    pub fn error_grad(&self, e_bar: &[f64]) -> Vec<f64> {
        e_bar.iter().map(|&e| sgnpow(e, self.alpha)).collect()
    }
}

pub fn default_multilayer_beta(alpha: f64) -> f64 {
    (alpha / (alpha + 1.0)).min(0.999 * (1.0 - alpha))
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must lie in (0, 1), got {v}")))
    }
}

/// Which loss drives a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Lyapunov(LyapunovLoss),
    L1,
    L2,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Lyapunov(_) => "lyapunov",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }

    pub fn eval(&self, e_bar: &[f64]) -> f64 {
        match self {
            LossKind::Lyapunov(l) => l.eval(e_bar),
            LossKind::L1 => e_bar.iter().map(|e| e.abs()).sum(),
            LossKind::L2 => 0.5 * e_bar.iter().map(|e| e * e).sum::<f64>(),
        }
    }

    /// Gradient (subgradient for L1, with `sign(0) = 0`) with respect to the errors.
    pub fn error_grad(&self, e_bar: &[f64]) -> Vec<f64> {
        match self {
            LossKind::Lyapunov(l) => l.error_grad(e_bar),
            LossKind::L1 => e_bar.iter().map(|&e| sgnpow(e, 0.0)).collect(),
            LossKind::L2 => e_bar.to_vec(),
        }
    }

    pub fn lyapunov(&self) -> Option<&LyapunovLoss> {
        match self {
            LossKind::Lyapunov(l) => Some(l),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn sgnpow_cases() {
        assert_eq!(sgnpow(0.0, 0.7), 0.0);
        assert_eq!(sgnpow(-4.0, 0.5), -2.0);
        for v in [-3.2, 0.0, 1.1] {
            assert_eq!(sgnpow(v, 1.0), v);
        }
        assert_eq!(sgnpow(-2.5, 0.0), -1.0);
        assert_eq!(sgnpow(0.0, 0.0), 0.0);
    }

    #[test]
    fn lyap_eval_values() {
        let l = LyapunovLoss::single_neuron(0.7).unwrap();
        assert_eq!(l.eval(&[0.0, 0.0]), 0.0);
        // alpha = 1 is outside the loss's admissible range; evaluate the formula directly.
        let quad = LyapunovLoss {
            alpha: 1.0,
            beta: 0.5,
        };
        assert_eq!(quad.eval(&[1.0]), 0.5);
        assert_eq!(quad.error_grad(&[0.3, -2.0]), vec![0.3, -2.0]);

        let oracle = (0.3f64.powf(1.7) + 0.4f64.powf(1.7)) / 1.7;
        let got = l.eval(&[0.3, -0.4]);
        assert!((got - oracle).abs() <= 1e-15 * oracle);
    }

    #[test]
    fn lyap_grad_matches_finite_difference() {
        let l = LyapunovLoss::single_neuron(0.7).unwrap();
        assert_eq!(l.error_grad(&[0.0, 0.0]), vec![0.0, 0.0]);
        let fd = central_diff(|e| l.eval(&[e]), 0.3, 1e-6);
        let g = l.error_grad(&[0.3])[0];
        assert!(((g - fd) / g).abs() < 1e-6, "{g} vs {fd}");
    }

    #[test]
    fn baselines() {
        let e = [3.0, -4.0];
        assert_eq!(LossKind::L1.eval(&e), 7.0);
        assert_eq!(LossKind::L2.eval(&e), 12.5);
        assert_eq!(LossKind::L1.eval(&[0.0, 0.0]), 0.0);
        assert_eq!(LossKind::L2.eval(&[0.0, 0.0]), 0.0);
        for kind in [LossKind::L1, LossKind::L2] {
            for x in [-1.3, -0.1, 0.25, 2.0] {
                let fd = central_diff(|v| kind.eval(&[v]), x, 1e-6);
                let g = kind.error_grad(&[x])[0];
                assert!((g - fd).abs() < 1e-8, "{kind:?} at {x}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn exponent_validation() {
        assert!(LyapunovLoss::single_neuron(0.0).is_err());
        assert!(LyapunovLoss::single_neuron(1.0).is_err());
        assert!(LyapunovLoss::multilayer_with_beta(0.7, 0.4).is_err());
        let ml = LyapunovLoss::multilayer(0.7).unwrap();
        assert!(ml.alpha() + ml.beta() < 1.0);
        let ml = LyapunovLoss::multilayer(0.3).unwrap();
        assert_eq!(ml.beta(), 0.3 / 1.3);
        assert!(LyapunovLoss::unsafe_exponents(0.0, 0.0).is_ok());
        assert!(LyapunovLoss::unsafe_exponents(-0.1, 0.0).is_err());
    }

    #[test]
    fn single_output_exponent_identity() {
        // |e|^α = ((α+1) E)^(α/(α+1)) for a single output.
        for alpha in [0.3, 0.5, 0.7, 0.9] {
            let l = LyapunovLoss::single_neuron(alpha).unwrap();
            let mut e: f64 = 1e-6;
            while e <= 10.0 {
                let lhs = e.powf(alpha);
                let rhs = ((alpha + 1.0) * l.eval(&[e])).powf(l.beta());
                assert!(((lhs - rhs) / lhs).abs() <= 1e-12, "alpha {alpha}, e {e}");
                e *= 1.37;
            }
        }
    }

    proptest! {
        #[test]
        fn sgnpow_is_odd(v in -1e6f64..1e6, p in 0.0f64..3.0) {
            prop_assert_eq!(sgnpow(-v, p), -sgnpow(v, p));
        }

        #[test]
        fn lyap_eval_permutation_invariant_and_positive(
            e in proptest::collection::vec(-5.0f64..5.0, 1..6),
            alpha in 0.05f64..0.95,
        ) {
            let l = LyapunovLoss::single_neuron(alpha).unwrap();
            let mut rev = e.clone();
            rev.reverse();
            let a = l.eval(&e);
            let b = l.eval(&rev);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            if e.iter().any(|v| *v != 0.0) {
                prop_assert!(a > 0.0);
            }
        }

        #[test]
        fn lyap_grad_is_derivative(e in 0.05f64..3.0, neg in any::<bool>(), alpha in 0.2f64..0.95) {
            let e = if neg { -e } else { e };
            let l = LyapunovLoss::single_neuron(alpha).unwrap();
            let fd = central_diff(|v| l.eval(&[v]), e, 1e-6);
            let g = l.error_grad(&[e])[0];
            prop_assert!(((g - fd) / g).abs() < 1e-6);
        }
    }
}
