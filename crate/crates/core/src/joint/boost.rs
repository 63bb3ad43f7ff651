//! Sequential boosting of multi-head members on reweighted data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layers::HeadWeights;
use super::networks::{
    joint_network_output, network_weight, save_weight_table, update_sample_weights, ReweightMode,
    SampleWeightTable, ACC_CLAMP,
};
use crate::data::LabeledImageSet;
use crate::error::{ensure, Error, Result};
use crate::nn::checkpoint::{save_network, CheckpointMeta};
use crate::nn::{build_multihead, ArchSpec, HeadOrder, MultiHeadNetwork};
use crate::train::{error_rate, evaluate, member_init_seed, train_network, EpochMetrics, TrainConfig};

/// Which prediction decides whether a training sample counts as correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Judge {
    /// The member's combined multi-head output.
    #[default]
    Joint,
    Head1,
}

impl std::str::FromStr for Judge {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Judge::Joint),
            "head1" => Ok(Judge::Head1),
            _ => Err(Error::Config(format!("unknown judge {s:?}, expected joint or head1"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostConfig {
    pub gamma: usize,
    pub epsilon: f64,
    pub mode: ReweightMode,
    pub judge: Judge,
    /// Member architecture, already channel-scaled.
    pub arch: ArchSpec,
    pub m: usize,
    pub order: HeadOrder,
    /// Training settings shared by all members; `member` is overwritten per round.
    pub train: TrainConfig,
    /// Where checkpoints, weight tables and the manifest go; `None` keeps
    /// everything in memory.
    pub out_dir: Option<PathBuf>,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub code_version: String,
}

/// Progress of a boosting run: one entry per completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostState {
    pub gamma: usize,
    pub epsilon: f64,
    pub lambdas: Vec<f64>,
    pub member_refs: Vec<String>,
    /// Clamped training-set accuracy of each member.
    pub accs: Vec<f64>,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub member: usize,
    pub checkpoint: String,
    /// Weight table the member was trained on.
    pub train_weights: String,
    pub acc: f64,
    pub lambda: f64,
    pub test_error: f64,
    pub joint_test_error: f64,
}

/// The JSON file written next to the member checkpoints. Paths are relative
/// to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostManifest {
    pub gamma: usize,
    pub epsilon: f64,
    pub reweight_mode: ReweightMode,
    pub judge: Judge,
    pub mu: f64,
    pub rounds: Vec<RoundRecord>,
    pub final_weights: String,
    pub joint_test_error: f64,
}

impl BoostManifest {
    pub fn state(&self) -> BoostState {
        BoostState {
            gamma: self.gamma,
            epsilon: self.epsilon,
            lambdas: self.rounds.iter().map(|r| r.lambda).collect(),
            member_refs: self.rounds.iter().map(|r| r.checkpoint.clone()).collect(),
            accs: self.rounds.iter().map(|r| r.acc).collect(),
            round: self.rounds.len(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(e.column() as u64, format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub struct BoostOutcome {
    pub state: BoostState,
    pub manifest: BoostManifest,
    pub members: Vec<MultiHeadNetwork>,
    /// `tables[i]` is the table member `i` trained on; the last entry is the
    /// table after the final update.
    pub tables: Vec<SampleWeightTable>,
    pub metrics: Vec<EpochMetrics>,
    pub joint_test_error: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// λ-weighted ensemble error of `members` on `set`.
pub fn ensemble_error(
    members: &[MultiHeadNetwork],
    lambdas: &[f64],
    hw: &[HeadWeights],
    set: &LabeledImageSet,
    exec: crate::Exec,
) -> Result<f64> {
    let outputs = members
        .iter()
        .zip(hw)
        .map(|(net, h)| evaluate(net, set, h, exec).map(|r| r.joint_output))
        .collect::<Result<Vec<_>>>()?;
    error_rate(&joint_network_output(&outputs, lambdas)?, &set.labels)
}

/// Train `gamma` members one after another. Member 1 sees uniform sample
/// weights; each later member sees the table reweighted by its predecessor's
/// mistakes. `on_epoch` receives every member's metric rows as they happen.
pub fn boost_train(
    train: &LabeledImageSet,
    test: &LabeledImageSet,
    cfg: &BoostConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<BoostOutcome> {
    ensure!(cfg.gamma >= 1, Config, "gamma must be at least 1");
    ensure!(cfg.epsilon > 0.0, Config, "epsilon must be positive, got {}", cfg.epsilon);
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
    }
    let hw = cfg.train.head_weights.clone();
    let exec = cfg.train.exec;
    let mut tables = vec![SampleWeightTable::uniform(train.len())];
    let mut members = Vec::with_capacity(cfg.gamma);
    let mut metrics = Vec::new();
    let mut rounds = Vec::with_capacity(cfg.gamma);
    let mut lambdas = Vec::with_capacity(cfg.gamma);
    let mut test_outputs = Vec::with_capacity(cfg.gamma);

    for i in 0..cfg.gamma {
        let table = tables.last().expect("at least the uniform table").clone();
        let mut net = build_multihead(&cfg.arch, cfg.m, cfg.order, member_init_seed(cfg.train.seed, i))?;
        let tc = TrainConfig {
            member: i,
            ..cfg.train.clone()
        };
        metrics.extend(train_network(&mut net, train, test, &table, &tc, &mut on_epoch)?);

        let on_train = evaluate(&net, train, &hw, exec)?;
        let correct = match cfg.judge {
            Judge::Joint => on_train.joint_correct(&train.labels)?,
            Judge::Head1 => on_train.head1_correct(&train.labels)?,
        };
        let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
        if acc <= ACC_CLAMP.0 {
            return Err(Error::Numeric(format!(
                "round {} aborted: member training accuracy {acc} does not exceed {}",
                i + 1,
                ACC_CLAMP.0
            )));
        }
        let lambda = network_weight(acc, cfg.epsilon)?;
        log::info!("round {}: training accuracy {acc:.4}, lambda {lambda:.6}", i + 1);
        let next = update_sample_weights(&table, &correct, lambda, cfg.mode)?;

        let on_test = evaluate(&net, test, &hw, exec)?;
        test_outputs.push(on_test.joint_output.clone());
        lambdas.push(lambda);
        let joint_so_far = error_rate(&joint_network_output(&test_outputs, &lambdas)?, &test.labels)?;

        let checkpoint = format!("member_{}.jdec", i + 1);
        let train_weights = format!("weights_{}.jdwt", i + 1);
        if let Some(dir) = &cfg.out_dir {
            let meta = CheckpointMeta {
                kind: "network".into(),
                arch: cfg.arch.clone(),
                heads: net.head_config(),
                alpha1: hw.alpha1,
                k: hw.k,
                mu: hw.mu,
                channel_mean: cfg.channel_mean.clone(),
                channel_std: cfg.channel_std.clone(),
                code_version: cfg.code_version.clone(),
            };
            save_network(&dir.join(&checkpoint), &net, &meta)?;
            save_weight_table(&dir.join(&train_weights), &table)?;
        }
        rounds.push(RoundRecord {
            member: i + 1,
            checkpoint,
            train_weights,
            acc,
            lambda,
            test_error: on_test.joint_error,
            joint_test_error: joint_so_far,
        });
        members.push(net);
        tables.push(next);
    }

    let joint_test_error = rounds.last().expect("gamma >= 1").joint_test_error;
    let final_weights = "weights_final.jdwt".to_string();
    let manifest = BoostManifest {
        gamma: cfg.gamma,
        epsilon: cfg.epsilon,
        reweight_mode: cfg.mode,
        judge: cfg.judge,
        mu: hw.mu,
        rounds,
        final_weights,
        joint_test_error,
    };
    if let Some(dir) = &cfg.out_dir {
        save_weight_table(&dir.join(&manifest.final_weights), tables.last().unwrap())?;
        manifest.save(&dir.join(MANIFEST_FILE))?;
    }
    Ok(BoostOutcome {
        state: manifest.state(),
        manifest,
        members,
        tables,
        metrics,
        joint_test_error,
    })
}
