//! Oracles shared by integration tests. Nothing here calls the library's
//! forward pass or loss.
#![allow(dead_code)]

use lyapflow::net::{Activation, Mlp};

/// Forward pass written out independently of the library's trace.
pub fn reference_output(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut z: Vec<f64> = x.to_vec();
    let last = mlp.weights().len() - 1;
    for (l, w) in mlp.weights().iter().enumerate() {
        z.push(1.0);
        let a: Vec<f64> = (0..w.rows()).map(|j| (0..w.cols()).map(|i| w[(j, i)] * z[i]).sum()).collect();
        let act = if l == last { mlp.output_activation() } else { Activation::Sigmoid };
        z = a
            .iter()
            .map(|&v| match act {
                Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                Activation::Identity => v,
            })
            .collect();
    }
    z
}

/// `Σ |o - y|^(α+1) / (α+1)`.
pub fn reference_loss(mlp: &Mlp, x: &[f64], y: &[f64], alpha: f64) -> f64 {
    reference_output(mlp, x)
        .iter()
        .zip(y)
        .map(|(o, t)| (o - t).abs().powf(alpha + 1.0) / (alpha + 1.0))
        .sum()
}

/// Central differences of [`reference_loss`] with step `h`, in the layout
/// of `mlp.weights()`.
pub fn fd_gradient(mlp: &Mlp, x: &[f64], y: &[f64], alpha: f64, h: f64) -> Vec<Vec<f64>> {
    let mut probe = mlp.clone();
    let mut out = Vec::new();
    for l in 0..mlp.weights().len() {
        let (rows, cols) = mlp.weights()[l].shape();
        let mut g = Vec::with_capacity(rows * cols);
        for j in 0..rows {
            for i in 0..cols {
                let w = mlp.weights()[l][(j, i)];
                probe.weights_mut()[l][(j, i)] = w + h;
                let up = reference_loss(&probe, x, y, alpha);
                probe.weights_mut()[l][(j, i)] = w - h;
                let down = reference_loss(&probe, x, y, alpha);
                probe.weights_mut()[l][(j, i)] = w;
                g.push((up - down) / (2.0 * h));
            }
        }
        out.push(g);
    }
    out
}

/// Closed form of `dE/dt = -c E^β` from `E(0) = e0`, zero after the first root.
pub fn power_decay(e0: f64, c: f64, beta: f64, t: f64) -> f64 {
    (e0.powf(1.0 - beta) - c * (1.0 - beta) * t).max(0.0).powf(1.0 / (1.0 - beta))
}
