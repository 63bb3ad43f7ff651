//! Multi-layer joint decision: head weights, combined loss and combined output.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Per-head weights α_1..α_m plus the regulation factors k and μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub alpha: Vec<f64>,
    pub alpha1: f64,
    pub k: f64,
    pub mu: f64,
}

/// `[α_1, α_1/(k·e), α_1/(k·e²), ...]` of length `m`.
pub fn head_weights(alpha1: f64, k: f64, m: usize) -> Result<Vec<f64>> {
    ensure!(m >= 1, Contract, "need at least one head, got m = {m}");
    ensure!(alpha1 > 0.0, Contract, "alpha1 must be positive, got {alpha1}");
    ensure!(k > 0.0, Contract, "k must be positive, got {k}");
    Ok((0..m)
        .map(|i| if i == 0 { alpha1 } else { alpha1 / (k * (i as f64).exp()) })
        .collect())
}

impl HeadWeights {
    pub fn new(alpha1: f64, k: f64, mu: f64, m: usize) -> Result<Self> {
        ensure!(mu >= 0.0, Contract, "mu must be non-negative, got {mu}");
        Ok(HeadWeights {
            alpha: head_weights(alpha1, k, m)?,
            alpha1,
            k,
            mu,
        })
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    /// Same α, different μ.
    pub fn with_mu(&self, mu: f64) -> Self {
        HeadWeights { mu, ..self.clone() }
    }

    /// Output coefficients: `α_1` for head 1, `μ·α_i` for the rest.
    pub fn output_coefficients(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .enumerate()
            .map(|(i, &a)| if i == 0 { a } else { self.mu * a })
            .collect()
    }
}

/// `Σ α_i · loss_i`
pub fn multilayer_loss(head_losses: &[f64], hw: &HeadWeights) -> Result<f64> {
    ensure!(
        head_losses.len() == hw.m(),
        Contract,
        "{} head losses for {} weights",
        head_losses.len(),
        hw.m()
    );
    Ok(head_losses.iter().zip(&hw.alpha).map(|(l, a)| a * l).sum())
}

/// `α_1·O_1 + μ·Σ_{i≥2} α_i·O_i`, not renormalized.
pub fn multilayer_output(head_outputs: &[Tensor], hw: &HeadWeights) -> Result<Tensor> {
    ensure!(
        head_outputs.len() == hw.m(),
        Contract,
        "{} head outputs for {} weights",
        head_outputs.len(),
        hw.m()
    );
    let shape = head_outputs[0].shape();
    ensure!(
        head_outputs.iter().all(|o| o.shape() == shape),
        Contract,
        "head outputs differ in shape"
    );
    let coef = hw.output_coefficients();
    let mut acc = vec![0.0; head_outputs[0].numel()];
    for (o, c) in head_outputs.iter().zip(&coef) {
        acc.iter_mut().zip(o.data()).for_each(|(a, v)| *a += c * v);
    }
    Ok(Tensor::from_parts(shape.to_vec(), acc))
}
