//! Multi-layer perceptron: forward evaluation and the backward sensitivity
//! recursion used by the weight-update laws.
//!
//! Every layer's activation vector carries a trailing constant `1`, so the
//! last column of each weight matrix is that unit's bias. Weight matrix `l`
//! therefore has shape `sizes[l+1] × (sizes[l] + 1)`, and entry `(j, i)` is
//! the weight from unit `i` of layer `l` into unit `j` of layer `l+1`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::matrix::Matrix;

/// Pre-activations are clamped to `[-Z_CLAMP, Z_CLAMP]` before any exponential.
pub const Z_CLAMP: f64 = 30.0;

#[inline]
pub fn clamp_z(z: f64) -> f64 {
    z.clamp(-Z_CLAMP, Z_CLAMP)
}

pub fn sigmoid(z: f64) -> f64 {
    let z = clamp_z(z);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_prime(z: f64) -> f64 {
    let e = (-clamp_z(z).abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `e^z (1 + e^-z)^2`, computed as `e^z + 2 + e^-z`; the reciprocal of `σ'(z)`.
pub fn inv_sigmoid_prime(z: f64) -> f64 {
    let z = clamp_z(z);
    z.exp() + 2.0 + (-z).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn value(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(a),
            Activation::Identity => a,
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid_prime(a),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Matrix>,
    activations: Vec<Activation>,
}

impl Mlp {
    /// Hidden layers are sigmoid; `output` selects the last layer's activation.
    pub fn from_weights(sizes: &[usize], weights: Vec<Matrix>, output: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        if weights.len() != sizes.len() - 1 {
            return Err(Error::Shape {
                context: "weight layer count",
                expected: sizes.len() - 1,
                actual: weights.len(),
            });
        }
        for (l, w) in weights.iter().enumerate() {
            if w.rows() != sizes[l + 1] {
                return Err(Error::Shape {
                    context: "weight matrix rows",
                    expected: sizes[l + 1],
                    actual: w.rows(),
                });
            }
            if w.cols() != sizes[l] + 1 {
                return Err(Error::Shape {
                    context: "weight matrix columns",
                    expected: sizes[l] + 1,
                    actual: w.cols(),
                });
            }
            if !w.is_finite() {
                return Err(Error::invalid("weights", "all weight entries must be finite"));
            }
        }
        let mut activations = vec![Activation::Sigmoid; weights.len()];
        *activations.last_mut().unwrap() = output;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            activations,
        })
    }

    /// Weights drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        output: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(sizes)?;
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid("init_scale", format!("must be finite and >= 0, got {scale}")));
        }
        let weights = sizes
            .windows(2)
            .map(|w| Matrix::from_fn(w[1], w[0] + 1, |_, _| rng.random_range(-scale..=scale)))
            .collect();
        Self::from_weights(sizes, weights, output)
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        let weights = sizes.windows(2).map(|w| Matrix::zeros(w[1], w[0] + 1)).collect();
        Self::from_weights(sizes, weights, output)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn output_activation(&self) -> Activation {
        *self.activations.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }

    /// One sigmoid unit fed directly by the inputs.
    pub fn is_single_neuron(&self) -> bool {
        self.sizes.len() == 2 && self.sizes[1] == 1 && self.activations[0] == Activation::Sigmoid
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }

    /// `self + scale * rates`, layer by layer.
    pub fn add_scaled(&mut self, scale: f64, rates: &[Matrix]) {
        for (w, r) in self.weights.iter_mut().zip(rates) {
            w.add_scaled(scale, r);
        }
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid("layer_sizes", "need at least an input and an output layer"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("layer_sizes", "every layer needs at least one unit"));
    }
    Ok(())
}

/// Per-layer state of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `z[0]` is the input with a trailing bias entry; `z[l+1]` the
    /// activations of weight layer `l`, also bias-extended.
    pub z: Vec<Vec<f64>>,
    /// `a[l] = W_l z[l]`.
    pub a: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        let z0 = &self.z[0];
        &z0[..z0.len() - 1]
    }

    /// Copy of the trace whose input layer reads `x` instead. Deeper layers are
    /// left untouched; used when the update law observes a perturbed input.
    pub fn with_observed_input(&self, x: &[f64]) -> ForwardTrace {
        let mut t = self.clone();
        let n = t.z[0].len() - 1;
        t.z[0][..n].copy_from_slice(x);
        t
    }
}

pub fn forward(mlp: &Mlp, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != mlp.inputs() {
        return Err(Error::Shape {
            context: "input vector",
            expected: mlp.inputs(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x", "input entries must be finite"));
    }
    let layers = mlp.weights.len();
    let mut z = Vec::with_capacity(layers + 1);
    let mut a = Vec::with_capacity(layers);
    let mut current: Vec<f64> = x.iter().copied().chain(std::iter::once(1.0)).collect();
    for (w, act) in mlp.weights.iter().zip(&mlp.activations) {
        let pre = w.mul_vec(&current);
        let mut next: Vec<f64> = pre.iter().map(|&v| act.value(v)).collect();
        next.push(1.0);
        z.push(std::mem::replace(&mut current, next));
        a.push(pre);
    }
    let output = current[..current.len() - 1].to_vec();
    z.push(current);
    Ok(ForwardTrace { z, a, output })
}

/// `∂E/∂a_j` for every non-bias unit, one vector per weight layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Deltas(pub Vec<Vec<f64>>);

impl Deltas {
    pub fn layers(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|d| *d == 0.0)
    }
}

/// Backward recursion. The output layer gets `act'(a_m) · ∂Loss/∂y_m`;
/// hidden unit `j` gets `σ'(a_j) Σ_k w_kj δ_k`, summing over the non-bias
/// units `k` of the next layer. Bias units receive no sensitivity.
pub fn sensitivities(mlp: &Mlp, trace: &ForwardTrace, y_star: &[f64], loss: &LossKind) -> Result<Deltas> {
    if y_star.len() != mlp.outputs() {
        return Err(Error::Shape {
            context: "target vector",
            expected: mlp.outputs(),
            actual: y_star.len(),
        });
    }
    check_trace(mlp, trace)?;
    let e_bar: Vec<f64> = trace.output.iter().zip(y_star).map(|(y, t)| y - t).collect();
    let g = loss.error_grad(&e_bar);
    let layers = mlp.weights.len();
    let mut deltas = vec![Vec::new(); layers];
    let out_act = mlp.activations[layers - 1];
    deltas[layers - 1] = trace.a[layers - 1]
        .iter()
        .zip(&g)
        .map(|(&a, &gm)| out_act.derivative(a) * gm)
        .collect();
    for l in (0..layers - 1).rev() {
        let next_w = &mlp.weights[l + 1];
        let next_d = &deltas[l + 1];
        let act = mlp.activations[l];
        deltas[l] = trace.a[l]
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let back: f64 = next_d.iter().enumerate().map(|(k, d)| next_w[(k, j)] * d).sum();
                act.derivative(a) * back
            })
            .collect();
    }
    Ok(Deltas(deltas))
}

fn check_trace(mlp: &Mlp, trace: &ForwardTrace) -> Result<()> {
    let layers = mlp.weights.len();
    if trace.a.len() != layers || trace.z.len() != layers + 1 {
        return Err(Error::Shape {
            context: "forward trace layers",
            expected: layers,
            actual: trace.a.len(),
        });
    }
    Ok(())
}

/// `∂E/∂w_ji = δ_j z_i`, bias column included.
pub fn loss_gradient(deltas: &Deltas, trace: &ForwardTrace) -> Result<Vec<Matrix>> {
    if deltas.0.len() + 1 != trace.z.len() {
        return Err(Error::Shape {
            context: "deltas vs trace layers",
            expected: trace.z.len().saturating_sub(1),
            actual: deltas.0.len(),
        });
    }
    Ok(deltas
        .0
        .iter()
        .zip(&trace.z)
        .map(|(d, z)| Matrix::from_fn(d.len(), z.len(), |j, i| d[j] * z[i]))
        .collect())
}

/// Output errors `y - y*` for one sample.
pub fn output_error(trace: &ForwardTrace, y_star: &[f64]) -> Vec<f64> {
    trace.output.iter().zip(y_star).map(|(y, t)| y - t).collect()
}

/// Loss of one sample.
pub fn sample_loss(mlp: &Mlp, x: &[f64], y_star: &[f64], loss: &LossKind) -> Result<f64> {
    let trace = forward(mlp, x)?;
    Ok(loss.eval(&output_error(&trace, y_star)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LyapunovLoss;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: &[f64], bias: f64) -> Mlp {
        let mut row = w.to_vec();
        row.push(bias);
        Mlp::from_weights(&[w.len(), 1], vec![Matrix::from_rows(&[row])], Activation::Sigmoid).unwrap()
    }

    #[test]
    fn zero_weights_give_half() {
        let m = single(&[0.0, 0.0, 0.0], 0.0);
        let t = forward(&m, &[3.0, -1.0, 7.5]).unwrap();
        assert_eq!(t.output, vec![0.5]);
    }

    #[test]
    fn analytic_sigmoid_values() {
        let m = single(&[1.0], 0.0);
        assert_eq!(forward(&m, &[0.0]).unwrap().output, vec![0.5]);
        let y = forward(&m, &[3f64.ln()]).unwrap().output[0];
        assert!((y - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Mlp::random(&[2, 2, 1], Activation::Sigmoid, 0.5, &mut rng).unwrap();
        let x = [0.3, -0.8];
        let w0 = &m.weights()[0];
        let w1 = &m.weights()[1];
        let h: Vec<f64> = (0..2)
            .map(|j| {
                let a = w0[(j, 0)] * x[0] + w0[(j, 1)] * x[1] + w0[(j, 2)];
                1.0 / (1.0 + (-a).exp())
            })
            .collect();
        let a_out = w1[(0, 0)] * h[0] + w1[(0, 1)] * h[1] + w1[(0, 2)];
        let y = 1.0 / (1.0 + (-a_out).exp());
        let t = forward(&m, &x).unwrap();
        assert!((t.output[0] - y).abs() < 1e-15);
        assert_eq!(t.z[1][2], 1.0);
    }

    #[test]
    fn input_shape_error() {
        let m = single(&[1.0, 2.0], 0.0);
        assert!(matches!(forward(&m, &[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            Mlp::from_weights(&[2, 1], vec![Matrix::zeros(1, 2)], Activation::Sigmoid),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_error_zero_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::random(&[3, 4, 2], Activation::Sigmoid, 0.5, &mut rng).unwrap();
        let t = forward(&m, &[0.1, 0.2, 0.3]).unwrap();
        let loss = LossKind::Lyapunov(LyapunovLoss::multilayer(0.7).unwrap());
        let d = sensitivities(&m, &t, &t.output.clone(), &loss).unwrap();
        assert!(d.is_zero());
        let g = loss_gradient(&d, &t).unwrap();
        assert!(g.iter().all(|m| m.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_neuron_l2_delta() {
        let m = single(&[0.4, -0.2], 0.1);
        let x = [1.0, 2.0];
        let t = forward(&m, &x).unwrap();
        let y_star = [0.9];
        let d = sensitivities(&m, &t, &y_star, &LossKind::L2).unwrap();
        let z = t.a[0][0];
        let expected = sigmoid_prime(z) * (t.output[0] - 0.9);
        assert!((d.0[0][0] - expected).abs() < 1e-16);
    }

    #[test]
    fn single_neuron_gradient_chain() {
        let m = single(&[0.4, -0.2], 0.1);
        let x = [1.0, 2.0];
        let t = forward(&m, &x).unwrap();
        let l = LyapunovLoss::single_neuron(0.7).unwrap();
        let loss = LossKind::Lyapunov(l);
        let y_star = [0.1];
        let g = loss_gradient(&sensitivities(&m, &t, &y_star, &loss).unwrap(), &t).unwrap();
        let e = t.output[0] - 0.1;
        for i in 0..2 {
            let expected = crate::loss::sgnpow(e, 0.7) * sigmoid_prime(t.a[0][0]) * x[i];
            assert!((g[0][(0, i)] - expected).abs() < 1e-16);
        }
    }

    #[test]
    fn sigmoid_range_and_derivative_identity() {
        for z in [-1e6, -40.0, -30.0, -3.0, 0.0, 2.5, 30.0, 45.0, 1e6] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0, "{z}");
            let d = sigmoid_prime(z);
            assert!(d > 0.0 && d <= 0.25);
            assert!((inv_sigmoid_prime(z) * d - 1.0).abs() < 1e-9, "{z}");
        }
    }

    #[test]
    fn bias_equals_extra_constant_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mlp::random(&[3, 4, 1], Activation::Identity, 0.5, &mut rng).unwrap();
        // Same network with an explicit always-1 input and zero bias column.
        let w0 = &m.weights()[0];
        let w0x = Matrix::from_fn(4, 5, |j, i| if i < 4 { w0[(j, i)] } else { 0.0 });
        let explicit =
            Mlp::from_weights(&[4, 4, 1], vec![w0x, m.weights()[1].clone()], Activation::Identity).unwrap();
        let x = [0.2, -0.7, 1.3];
        let a = forward(&m, &x).unwrap().output;
        let b = forward(&explicit, &[0.2, -0.7, 1.3, 1.0]).unwrap().output;
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn forward_is_deterministic_and_bounded(seed in any::<u64>(), x in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Mlp::random(&[3, 5, 2], Activation::Sigmoid, 0.5, &mut rng).unwrap();
            let a = forward(&m, &x).unwrap();
            let b = forward(&m, &x).unwrap();
            prop_assert_eq!(&a, &b);
            for z in &a.z[1..] {
                prop_assert_eq!(*z.last().unwrap(), 1.0);
                for v in &z[..z.len() - 1] {
                    prop_assert!(*v > 0.0 && *v < 1.0);
                }
            }
        }
    }
}
