//! Weight-rate laws: the control inputs that drive training.
//!
//! - Single sigmoid unit: `u_i = -k_i sign(x_i) sign(e) (e^z + 2 + e^-z)`,
//!   bias frozen.
//! - Multi-layer: `dw_ji/dt = -k_ji sgnpow(δ_j z_i, α) E^β`, bias included.
//! - Baselines: plain gradient flow `dw/dt = -k ∂Loss/∂w`.

use crate::error::{Error, Result};
use crate::loss::{sgnpow, LyapunovLoss};
use crate::matrix::Matrix;
use crate::net::{inv_sigmoid_prime, Deltas, ForwardTrace, Mlp};

#[derive(Debug, Clone, PartialEq)]
pub enum GainMode {
    Scalar(f64),
    PerWeight(Vec<Matrix>),
}

/// Positive tuning gains, one per weight or one shared scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    mode: GainMode,
    k_min: f64,
}

impl GainSchedule {
    pub fn scalar(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::invalid("gain", format!("must be finite and > 0, got {k}")));
        }
        Ok(Self {
            mode: GainMode::Scalar(k),
            k_min: k,
        })
    }

    pub fn per_weight(gains: Vec<Matrix>) -> Result<Self> {
        let mut k_min = f64::INFINITY;
        for m in &gains {
            if m.as_slice().iter().any(|k| !(k.is_finite() && *k > 0.0)) {
                return Err(Error::invalid("gain", "every per-weight gain must be finite and > 0"));
            }
            k_min = k_min.min(m.min());
        }
        if !k_min.is_finite() {
            return Err(Error::invalid("gain", "per-weight gain set is empty"));
        }
        Ok(Self {
            mode: GainMode::PerWeight(gains),
            k_min,
        })
    }

    pub fn mode(&self) -> &GainMode {
        &self.mode
    }

    pub fn k_min(&self) -> f64 {
        self.k_min
    }

    pub fn gain(&self, layer: usize, j: usize, i: usize) -> f64 {
        match &self.mode {
            GainMode::Scalar(k) => *k,
            GainMode::PerWeight(m) => m[layer][(j, i)],
        }
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        match &self.mode {
            GainMode::Scalar(k) => Self::scalar(k * lambda),
            GainMode::PerWeight(m) => Self::per_weight(m.iter().map(|g| g.map(|k| k * lambda)).collect()),
        }
    }

    fn check_shape(&self, shapes: impl ExactSizeIterator<Item = (usize, usize)>) -> Result<()> {
        if let GainMode::PerWeight(m) = &self.mode {
            if m.len() != shapes.len() {
                return Err(Error::Shape {
                    context: "per-weight gain layers",
                    expected: shapes.len(),
                    actual: m.len(),
                });
            }
            for (g, (r, c)) in m.iter().zip(shapes) {
                if g.shape() != (r, c) {
                    return Err(Error::Shape {
                        context: "per-weight gain matrix entries",
                        expected: r * c,
                        actual: g.rows() * g.cols(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Weight rates, shaped like the network's weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal(pub Vec<Matrix>);

impl ControlSignal {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self(mlp.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect())
    }

    pub fn rates(&self) -> &[Matrix] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|m| m.dot(m)).sum::<f64>().sqrt()
    }

    /// `Σ grad · rate` over every weight: the induced `dE/dt`.
    pub fn dot(&self, grad: &[Matrix]) -> f64 {
        self.0.iter().zip(grad).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Matrix::is_finite)
    }
}

/// Single sigmoid unit law. `x` are the (observed) inputs, `e_bar` the output
/// error and `z` the unit's pre-activation. The returned signal has shape
/// `1 × (n + 1)` with a zero rate on the bias column.
pub fn single_neuron_update(x: &[f64], e_bar: f64, z: f64, gains: &GainSchedule) -> Result<ControlSignal> {
    let n = x.len();
    if let GainMode::PerWeight(m) = gains.mode() {
        if m.len() != 1 || m[0].rows() != 1 || m[0].cols() != n + 1 {
            return Err(Error::Mode("single-neuron law needs a 1-layer, 1-unit gain schedule".into()));
        }
    }
    let e_sign = sgnpow(e_bar, 0.0);
    let drive = inv_sigmoid_prime(z);
    let rates = Matrix::from_fn(1, n + 1, |_, i| {
        if i == n || e_sign == 0.0 || x[i] == 0.0 {
            0.0
        } else {
            -gains.gain(0, 0, i) * x[i].signum() * e_sign * drive
        }
    });
    Ok(ControlSignal(vec![rates]))
}

/// Multi-layer law `-k_ji sgnpow(δ_j z_i, α) E^β` for every weight, bias column included.
pub fn mlp_update(
    deltas: &Deltas,
    trace: &ForwardTrace,
    e: f64,
    gains: &GainSchedule,
    loss: &LyapunovLoss,
) -> Result<ControlSignal> {
    if !(e >= 0.0) {
        return Err(Error::Contract(format!("loss must be >= 0, got {e}")));
    }
    if deltas.0.len() + 1 != trace.z.len() {
        return Err(Error::Shape {
            context: "deltas vs trace layers",
            expected: trace.z.len().saturating_sub(1),
            actual: deltas.0.len(),
        });
    }
    gains.check_shape(deltas.0.iter().zip(&trace.z).map(|(d, z)| (d.len(), z.len())))?;
    let e_beta = if e == 0.0 { 0.0 } else { e.powf(loss.beta()) };
    let alpha = loss.alpha();
    let rates = deltas
        .0
        .iter()
        .zip(&trace.z)
        .enumerate()
        .map(|(l, (d, z))| {
            Matrix::from_fn(d.len(), z.len(), |j, i| {
                -gains.gain(l, j, i) * sgnpow(d[j] * z[i], alpha) * e_beta
            })
        })
        .collect();
    Ok(ControlSignal(rates))
}

/// Gradient flow `-k ∂Loss/∂w` with the same gains as the Lyapunov laws.
pub fn baseline_update(grad: &[Matrix], gains: &GainSchedule) -> Result<ControlSignal> {
    gains.check_shape(grad.iter().map(Matrix::shape))?;
    Ok(ControlSignal(
        grad.iter()
            .enumerate()
            .map(|(l, g)| Matrix::from_fn(g.rows(), g.cols(), |j, i| -gains.gain(l, j, i) * g[(j, i)]))
            .collect(),
    ))
}
