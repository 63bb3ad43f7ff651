//! Run configuration: defaults, then a `key=value` file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{
    channel_stats, load_toy_cache, make_toy_set, normalize, read_cifar10, save_toy_cache, AugmentPolicy,
    LabeledImageSet, TOY_CLASSES, TOY_SIZE,
};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::joint::{HeadWeights, Judge, ReweightMode};
use crate::nn::{scale_channels, ArchSpec, HeadOrder, ScalingFactor};
use crate::optim::SgdrSchedule;
use crate::train::TrainConfig;

pub const CODE_VERSION: &str = concat!("jointdec ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Toy,
    Cifar10,
}

impl FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Dataset::Toy),
            "cifar10" | "cifar-10" => Ok(Dataset::Cifar10),
            _ => Err(Error::Config(format!("unknown dataset {s:?}, expected toy or cifar10"))),
        }
    }
}

/// Every setting of a `train` or `boost` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub dataset: Dataset,
    pub data_dir: Option<PathBuf>,
    pub data_seed: u64,
    pub toy_train: usize,
    pub toy_test: usize,
    pub arch: String,
    /// Channel scaling factor; `None` means 1 for `train` and √(1/γ) for `boost`.
    pub scale: Option<f64>,
    pub m: usize,
    pub head_order: HeadOrder,
    pub alpha1: f64,
    pub k: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub gamma: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub t0: u64,
    pub t_mult: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub intent_mode: bool,
    pub judge: Judge,
    pub sequential: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: Dataset::Toy,
            data_dir: None,
            data_seed: 0,
            toy_train: 1200,
            toy_test: 600,
            arch: "res-tiny".into(),
            scale: None,
            m: 3,
            head_order: HeadOrder::DeepFirst,
            alpha1: 1.0,
            k: 1.0,
            mu: 0.5,
            epsilon: 10.0,
            gamma: 2,
            epochs: 15,
            batch_size: 128,
            lr_max: 0.1,
            lr_min: 0.0,
            t0: 1,
            t_mult: 2,
            momentum: 0.9,
            weight_decay: 0.0,
            augment: true,
            seed: 0,
            out: PathBuf::from("runs/latest"),
            intent_mode: false,
            judge: Judge::Joint,
            sequential: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Set one field from its kebab-case key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = v.parse()?,
            "data-dir" => self.data_dir = Some(PathBuf::from(v)),
            "data-seed" => self.data_seed = parse(key, v)?,
            "toy-train" => self.toy_train = parse(key, v)?,
            "toy-test" => self.toy_test = parse(key, v)?,
            "arch" => self.arch = v.to_string(),
            "scale" => self.scale = Some(parse(key, v)?),
            "m" => self.m = parse(key, v)?,
            "head-order" => self.head_order = v.parse()?,
            "alpha1" => self.alpha1 = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch-size" => self.batch_size = parse(key, v)?,
            "lr-max" => self.lr_max = parse(key, v)?,
            "lr-min" => self.lr_min = parse(key, v)?,
            "t0" => self.t0 = parse(key, v)?,
            "t-mult" => self.t_mult = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight-decay" => self.weight_decay = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "intent-mode" => self.intent_mode = parse_bool(key, v)?,
            "judge" => self.judge = v.parse()?,
            "sequential" => self.sequential = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a flat `key = value` file. Blank lines and `#` comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &BTreeMap<&'static str, String>) -> Result<()> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    pub fn reweight_mode(&self) -> ReweightMode {
        if self.intent_mode {
            ReweightMode::Intent
        } else {
            ReweightMode::Verbatim
        }
    }

    pub fn effective_scale(&self, boosting: bool) -> f64 {
        self.scale
            .unwrap_or(if boosting { (1.0 / self.gamma as f64).sqrt() } else { 1.0 })
    }

    fn input_geometry(&self) -> (usize, usize, usize) {
        match self.dataset {
            Dataset::Toy => (3, TOY_SIZE, TOY_CLASSES),
            Dataset::Cifar10 => (3, 32, 10),
        }
    }

    /// Unscaled architecture for this dataset.
    pub fn base_arch(&self) -> Result<ArchSpec> {
        let (c, s, k) = self.input_geometry();
        ArchSpec::by_name(&self.arch, c, s, k)
    }

    pub fn member_arch(&self, boosting: bool) -> Result<ArchSpec> {
        let factor = ScalingFactor::new(self.effective_scale(boosting))?;
        Ok(scale_channels(&self.base_arch()?, factor))
    }

    pub fn head_weights(&self) -> Result<HeadWeights> {
        HeadWeights::new(self.alpha1, self.k, self.mu, self.m).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> SgdrSchedule {
        SgdrSchedule {
            l_max: self.lr_max,
            l_min: self.lr_min,
            t0: self.t0,
            t_mult: self.t_mult,
        }
    }

    /// Check every field before any data is touched.
    pub fn validate(&self, boosting: bool) -> Result<()> {
        ensure!(self.m >= 1, Config, "m must be at least 1");
        ensure!(self.alpha1 > 0.0, Config, "alpha1 must be positive");
        ensure!(self.k > 0.0, Config, "k must be positive");
        ensure!(self.mu >= 0.0, Config, "mu must be non-negative");
        ensure!(self.epsilon > 0.0, Config, "epsilon must be positive");
        ensure!(self.gamma >= 1, Config, "gamma must be at least 1");
        ensure!(self.epochs >= 1, Config, "epochs must be at least 1");
        ensure!(self.batch_size >= 2, Config, "batch size must be at least 2");
        ensure!(self.toy_train >= 2 && self.toy_test >= 1, Config, "toy set too small");
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            Config,
            "momentum must lie in [0, 1)"
        );
        ensure!(self.weight_decay >= 0.0, Config, "weight decay must be non-negative");
        self.schedule().validate()?;
        let arch = self.member_arch(boosting)?;
        ensure!(
            self.m <= arch.num_parts(),
            Config,
            "m = {} exceeds the {} parts of {}",
            self.m,
            arch.num_parts(),
            self.arch
        );
        if self.dataset == Dataset::Cifar10 {
            ensure!(self.data_dir.is_some(), Config, "cifar10 needs --data-dir");
        }
        Ok(())
    }

    /// Raw (unnormalized) train and test splits.
    pub fn load_raw(&self) -> Result<(LabeledImageSet, LabeledImageSet)> {
        match self.dataset {
            Dataset::Toy => {
                let Some(dir) = &self.data_dir else {
                    return make_toy_set(self.data_seed, self.toy_train, self.toy_test);
                };
                let path = dir.join(format!(
                    "toy-{}-{}-{}.jdec",
                    self.data_seed, self.toy_train, self.toy_test
                ));
                if path.exists() {
                    return load_toy_cache(&path);
                }
                let sets = make_toy_set(self.data_seed, self.toy_train, self.toy_test)?;
                std::fs::create_dir_all(dir)?;
                save_toy_cache(&path, &sets.0, &sets.1)?;
                Ok(sets)
            }
            Dataset::Cifar10 => read_cifar10(self.data_dir.as_deref().expect("validated")),
        }
    }

    /// Augmentation policy with normalization constants taken from `train`.
    pub fn policy_for(&self, train: &LabeledImageSet) -> AugmentPolicy {
        let (mean, std) = channel_stats(train);
        let [c, h, _] = train.image_shape();
        if !self.augment {
            return AugmentPolicy {
                channel_mean: mean,
                channel_std: std,
                ..AugmentPolicy::identity(h, c)
            };
        }
        match self.dataset {
            Dataset::Toy => AugmentPolicy::toy(mean, std),
            Dataset::Cifar10 => AugmentPolicy::cifar(mean, std),
        }
    }

    /// Normalized train/test splits plus the policy that normalized them.
    pub fn load_prepared(&self) -> Result<(LabeledImageSet, LabeledImageSet, AugmentPolicy)> {
        let (train, test) = self.load_raw()?;
        let policy = self.policy_for(&train);
        Ok((normalize(&train, &policy)?, normalize(&test, &policy)?, policy))
    }

    pub fn train_config(&self, policy: AugmentPolicy) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: self.schedule(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            head_weights: self.head_weights()?,
            augment: policy,
            seed: self.seed,
            member: 0,
            exec: self.exec(),
        })
    }
}

/// What gets written to `config.json` in each run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub command: String,
    pub code_version: String,
    pub config: RunConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nmu = 1\nepochs=7\n\narch = vgg-tiny # trailing\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!((cfg.mu, cfg.epochs, cfg.arch.as_str()), (1.0, 7, "vgg-tiny"));
        let mut flags = BTreeMap::new();
        flags.insert("epochs", "3".to_string());
        cfg.apply_overrides(&flags).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.mu, 1.0);
    }

    #[test]
    fn bad_entries_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("nope", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("epochs", "many"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("augment", "maybe"), Err(Error::Config(_))));
    }

    #[test]
    fn validation_catches_bad_values() {
        let ok = RunConfig::default();
        ok.validate(false).unwrap();
        ok.validate(true).unwrap();
        for (k, v) in [("m", "4"), ("m", "0"), ("epsilon", "0"), ("scale", "1.5"), ("mu", "-1"), ("batch-size", "1")] {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert!(matches!(c.validate(false), Err(Error::Config(_))), "{k}={v}");
        }
    }

    #[test]
    fn default_member_scale_splits_parameters() {
        let mut c = RunConfig::default();
        c.gamma = 4;
        assert!((c.effective_scale(true) - 0.5).abs() < 1e-15);
        assert_eq!(c.effective_scale(false), 1.0);
    }

    #[test]
    fn snapshot_round_trips() {
        let snap = ConfigSnapshot {
            command: "train".into(),
            code_version: CODE_VERSION.into(),
            config: RunConfig::default(),
        };
        let text = serde_json::to_string(&snap).unwrap();
        assert_eq!(serde_json::from_str::<ConfigSnapshot>(&text).unwrap(), snap);
    }
}
