//! Multi-network joint decision: accuracy-derived member weights, sample
//! reweighting between rounds, and the λ-weighted ensemble output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

/// Training accuracies are clamped into this range before the logit.
pub const ACC_CLAMP: (f64, f64) = (0.001, 0.999);

/// `(1/ε)·ln(acc/(1−acc))` on the clamped accuracy.
pub fn network_weight(acc: f64, epsilon: f64) -> Result<f64> {
    ensure!(epsilon > 0.0, Contract, "epsilon must be positive, got {epsilon}");
    ensure!(!acc.is_nan(), Numeric, "accuracy is NaN");
    let a = clamp_acc(acc);
    let lambda = (a / (1.0 - a)).ln() / epsilon;
    if lambda <= 0.0 && a < 0.5 {
        log::warn!("member accuracy {acc} is below chance; its weight {lambda} is negative");
    }
    Ok(lambda)
}

pub fn clamp_acc(acc: f64) -> f64 {
    acc.clamp(ACC_CLAMP.0, ACC_CLAMP.1)
}

/// How the two reweighting factors are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReweightMode {
    /// Correct samples × `2·e^{−λ}`, wrong × `½·e^{λ}`.
    #[default]
    Verbatim,
    /// Factors swapped: correct × `½·e^{λ}`, wrong × `2·e^{−λ}`, so that for
    /// small λ correct samples lose weight and mistakes gain it.
    Intent,
}

impl std::str::FromStr for ReweightMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verbatim" | "false" | "off" => Ok(ReweightMode::Verbatim),
            "intent" | "true" | "on" => Ok(ReweightMode::Intent),
            _ => Err(Error::Config(format!("unknown reweight mode {s:?}"))),
        }
    }
}

/// `(factor if correct, factor if wrong)`
pub fn reweight_factors(lambda_prev: f64, mode: ReweightMode) -> (f64, f64) {
    let shrink = 2.0 * (-lambda_prev).exp();
    let grow = 0.5 * lambda_prev.exp();
    match mode {
        ReweightMode::Verbatim => (shrink, grow),
        ReweightMode::Intent => (grow, shrink),
    }
}

/// One positive weight per training sample; mean 1 after every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeightTable {
    pub weights: Vec<f64>,
    /// Boosting round that produced this table (0 = uniform start).
    pub round: usize,
}

impl SampleWeightTable {
    pub fn uniform(n: usize) -> Self {
        SampleWeightTable {
            weights: vec![1.0; n],
            round: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

/// Multiply each weight by its correct/wrong factor, then rescale to mean 1.
pub fn update_sample_weights(
    table: &SampleWeightTable,
    correct: &[bool],
    lambda_prev: f64,
    mode: ReweightMode,
) -> Result<SampleWeightTable> {
    ensure!(
        correct.len() == table.len(),
        Contract,
        "{} correctness flags for {} weights",
        correct.len(),
        table.len()
    );
    ensure!(lambda_prev.is_finite(), Numeric, "lambda is not finite");
    let (right, wrong) = reweight_factors(lambda_prev, mode);
    let mut w: Vec<f64> = table
        .weights
        .iter()
        .zip(correct)
        .map(|(&w, &ok)| w * if ok { right } else { wrong })
        .collect();
    let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
    ensure!(mean > 0.0 && mean.is_finite(), Numeric, "sample weights collapsed (mean {mean})");
    w.iter_mut().for_each(|v| *v /= mean);
    Ok(SampleWeightTable {
        weights: w,
        round: table.round + 1,
    })
}

/// True when no member has a positive weight.
pub fn degenerate_ensemble(lambdas: &[f64]) -> bool {
    lambdas.iter().all(|&l| l <= 0.0)
}

/// `Σ_j λ_j · O_j`
pub fn joint_network_output(outputs: &[Tensor], lambdas: &[f64]) -> Result<Tensor> {
    ensure!(!outputs.is_empty(), Contract, "no member outputs");
    ensure!(
        outputs.len() == lambdas.len(),
        Contract,
        "{} outputs for {} weights",
        outputs.len(),
        lambdas.len()
    );
    let shape = outputs[0].shape();
    ensure!(
        outputs.iter().all(|o| o.shape() == shape),
        Contract,
        "member outputs differ in shape"
    );
    if degenerate_ensemble(lambdas) {
        log::warn!("degenerate ensemble: all member weights are <= 0 ({lambdas:?})");
    }
    let mut acc = vec![0.0; outputs[0].numel()];
    for (o, &l) in outputs.iter().zip(lambdas) {
        acc.iter_mut().zip(o.data()).for_each(|(a, v)| *a += l * v);
    }
    Tensor::new(shape.to_vec(), acc)
}

pub const WEIGHT_TABLE_MAGIC: &[u8; 4] = b"JDWT";
pub const WEIGHT_TABLE_VERSION: u16 = 1;

/// 16-byte header (`"JDWT"`, version u16, round u16, count u64; all LE) then
/// `count` little-endian f64 weights.
pub fn encode_weight_table(table: &SampleWeightTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * table.len());
    out.extend_from_slice(WEIGHT_TABLE_MAGIC);
    out.extend_from_slice(&WEIGHT_TABLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.round.min(u16::MAX as usize) as u16).to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for w in &table.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_weight_table(bytes: &[u8]) -> Result<SampleWeightTable> {
    if bytes.len() < 16 {
        return Err(Error::format(0, "weight table shorter than its 16-byte header"));
    }
    if &bytes[..4] != WEIGHT_TABLE_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"JDWT\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WEIGHT_TABLE_VERSION {
        return Err(Error::format(4, format!("unsupported weight table version {version}")));
    }
    let round = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 8 * count {
        return Err(Error::format(
            16 + (body.len() - body.len() % 8).min(8 * count) as u64,
            format!("expected {count} weights, found {} bytes of payload", body.len()),
        ));
    }
    let weights: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::format(16 + 8 * i as u64, "weights must be finite and positive"));
    }
    Ok(SampleWeightTable { weights, round })
}

pub fn save_weight_table(path: &Path, table: &SampleWeightTable) -> Result<()> {
    fs::write(path, encode_weight_table(table))?;
    Ok(())
}

pub fn load_weight_table(path: &Path) -> Result<SampleWeightTable> {
    decode_weight_table(&fs::read(path)?)
}
