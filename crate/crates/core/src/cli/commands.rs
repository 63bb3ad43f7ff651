use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ConfigSnapshot, RunConfig, CODE_VERSION};
use super::metrics::MetricsWriter;
use super::EvalArgs;
use crate::data::{normalize, AugmentPolicy};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::joint::{boost_train, joint_network_output, BoostConfig, BoostManifest, HeadWeights};
use crate::nn::checkpoint::{load_network, save_network, CheckpointMeta};
use crate::nn::build_multihead;
use crate::train::{error_rate, evaluate, member_init_seed, train_network, EpochMetrics};

pub const CHECKPOINT_FILE: &str = "checkpoint.jdec";

/// Final numbers of a `train` or `boost` run, also written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub out: PathBuf,
    pub epochs: usize,
    /// Head-1 test error after the last epoch (last member for `boost`).
    pub final_test_error: f64,
    /// Joint test error after the last epoch; for `boost`, the ensemble's.
    pub final_joint_test_error: f64,
    pub best_test_error: f64,
    pub best_joint_test_error: f64,
    pub best_epoch: usize,
    pub param_count: usize,
    pub reference_param_count: usize,
    pub lambdas: Vec<f64>,
    pub accs: Vec<f64>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} finished: artifacts in {}", self.command, self.out.display());
        let _ = writeln!(s, "final test error (head 1): {}", self.final_test_error);
        let _ = writeln!(s, "final joint test error:    {}", self.final_joint_test_error);
        let _ = writeln!(
            s,
            "best joint test error:     {} (epoch {})",
            self.best_joint_test_error, self.best_epoch
        );
        let _ = write!(
            s,
            "parameters: {} (reference network {})",
            self.param_count, self.reference_param_count
        );
        if !self.lambdas.is_empty() {
            let _ = write!(s, "\nlambdas: {:?}\naccuracies: {:?}", self.lambdas, self.accs);
        }
        s
    }
}

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    let snap = ConfigSnapshot {
        command: command.into(),
        code_version: CODE_VERSION.into(),
        config: cfg.clone(),
    };
    fs::write(cfg.out.join("config.json"), serde_json::to_string_pretty(&snap)? + "\n")?;
    Ok(())
}

fn checkpoint_meta(cfg: &RunConfig, arch: crate::nn::ArchSpec, net_heads: crate::nn::HeadConfig, policy: &AugmentPolicy) -> CheckpointMeta {
    CheckpointMeta {
        kind: "network".into(),
        arch,
        heads: net_heads,
        alpha1: cfg.alpha1,
        k: cfg.k,
        mu: cfg.mu,
        channel_mean: policy.channel_mean.clone(),
        channel_std: policy.channel_std.clone(),
        code_version: CODE_VERSION.into(),
    }
}

fn best(rows: &[EpochMetrics]) -> (f64, f64, usize) {
    let mut best_head = f64::INFINITY;
    let mut best_joint = f64::INFINITY;
    let mut epoch = 0;
    for r in rows {
        best_head = best_head.min(r.test_error);
        if r.joint_test_error < best_joint {
            best_joint = r.joint_test_error;
            epoch = r.epoch;
        }
    }
    (best_head, best_joint, epoch)
}

/// Train one multi-head network and write its checkpoint, metrics and summary.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate(false)?;
    let (train, test, policy) = cfg.load_prepared()?;
    prepare_out(cfg, "train")?;
    let arch = cfg.member_arch(false)?;
    let mut net = build_multihead(&arch, cfg.m, cfg.head_order, member_init_seed(cfg.seed, 0))?;
    let tc = cfg.train_config(policy.clone())?;
    let mut writer = MetricsWriter::create(&cfg.out)?;
    let weights = crate::joint::SampleWeightTable::uniform(train.len());
    let rows = train_network(&mut net, &train, &test, &weights, &tc, |r| writer.write(r))?;
    save_network(
        &cfg.out.join(CHECKPOINT_FILE),
        &net,
        &checkpoint_meta(cfg, arch, net.head_config(), &policy),
    )?;
    let last = rows.last().expect("epochs >= 1");
    let (best_test_error, best_joint_test_error, best_epoch) = best(&rows);
    let summary = RunSummary {
        command: "train".into(),
        out: cfg.out.clone(),
        epochs: cfg.epochs,
        final_test_error: last.test_error,
        final_joint_test_error: last.joint_test_error,
        best_test_error,
        best_joint_test_error,
        best_epoch,
        param_count: net.param_count(),
        reference_param_count: cfg.base_arch()?.param_count(cfg.m),
        lambdas: vec![],
        accs: vec![],
    };
    fs::write(cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Run boosting and write member checkpoints, weight tables, the manifest,
/// metrics and summary.
pub fn cmd_boost(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate(true)?;
    let (train, test, policy) = cfg.load_prepared()?;
    prepare_out(cfg, "boost")?;
    let arch = cfg.member_arch(true)?;
    let bc = BoostConfig {
        gamma: cfg.gamma,
        epsilon: cfg.epsilon,
        mode: cfg.reweight_mode(),
        judge: cfg.judge,
        arch: arch.clone(),
        m: cfg.m,
        order: cfg.head_order,
        train: cfg.train_config(policy.clone())?,
        out_dir: Some(cfg.out.clone()),
        channel_mean: policy.channel_mean.clone(),
        channel_std: policy.channel_std.clone(),
        code_version: CODE_VERSION.into(),
    };
    let mut writer = MetricsWriter::create(&cfg.out)?;
    let outcome = boost_train(&train, &test, &bc, |r| writer.write(r))?;
    let last_rows: Vec<EpochMetrics> = outcome
        .metrics
        .iter()
        .filter(|r| r.member + 1 == cfg.gamma)
        .cloned()
        .collect();
    let last = last_rows.last().expect("epochs >= 1");
    let (best_test_error, best_joint_test_error, best_epoch) = best(&last_rows);
    let summary = RunSummary {
        command: "boost".into(),
        out: cfg.out.clone(),
        epochs: cfg.epochs,
        final_test_error: last.test_error,
        final_joint_test_error: outcome.joint_test_error,
        best_test_error,
        best_joint_test_error,
        best_epoch,
        param_count: outcome.members.iter().map(|n| n.param_count()).sum(),
        reference_param_count: cfg.base_arch()?.param_count(cfg.m),
        lambdas: outcome.state.lambdas.clone(),
        accs: outcome.state.accs.clone(),
    };
    fs::write(cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub struct EvalOptions {
    pub checkpoints: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub mu: Option<f64>,
    pub uniform_lambda: bool,
    pub data: RunConfig,
    pub exec: Exec,
}

fn snapshot_near(path: &Path) -> Option<RunConfig> {
    let text = fs::read_to_string(path.parent()?.join("config.json")).ok()?;
    serde_json::from_str::<ConfigSnapshot>(&text).ok().map(|s| s.config)
}

impl EvalOptions {
    pub fn from_args(args: EvalArgs) -> Result<Self> {
        let first = args.manifest.as_ref().or(args.checkpoints.first());
        let mut data = match (&args.config, first) {
            (Some(path), _) => {
                let mut c = RunConfig::default();
                c.apply_file(path)?;
                c
            }
            (None, Some(p)) => snapshot_near(p).unwrap_or_default(),
            (None, None) => RunConfig::default(),
        };
        for (k, v) in [
            ("dataset", &args.dataset),
            ("data-dir", &args.data_dir),
            ("data-seed", &args.data_seed),
            ("toy-train", &args.toy_train),
            ("toy-test", &args.toy_test),
        ] {
            if let Some(v) = v {
                data.set(k, v)?;
            }
        }
        Ok(EvalOptions {
            checkpoints: args.checkpoints,
            manifest: args.manifest,
            mu: args.mu,
            uniform_lambda: args.uniform_lambda,
            exec: if args.sequential { Exec::Sequential } else { Exec::default() },
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEval {
    pub checkpoint: PathBuf,
    pub lambda: f64,
    pub mu: f64,
    pub head_errors: Vec<f64>,
    pub joint_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub test_samples: usize,
    pub members: Vec<MemberEval>,
    /// Error of the λ-weighted combination of all members.
    pub ensemble_error: f64,
}

impl EvalSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (i, m) in self.members.iter().enumerate() {
            let _ = writeln!(s, "member {} ({})", i + 1, m.checkpoint.display());
            for (h, e) in m.head_errors.iter().enumerate() {
                let _ = writeln!(s, "  head {} error: {e}", h + 1);
            }
            let _ = writeln!(s, "  joint error (mu={}): {}", m.mu, m.joint_error);
            let _ = writeln!(s, "  lambda: {}", m.lambda);
        }
        let _ = writeln!(s, "ensemble error: {}", self.ensemble_error);
        s
    }
}

/// Evaluate checkpoints (or a manifest's members) on the test split.
pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalSummary> {
    let (paths, lambdas): (Vec<PathBuf>, Vec<f64>) = match &opts.manifest {
        Some(mpath) => {
            let manifest = BoostManifest::load(mpath)?;
            let dir = mpath.parent().unwrap_or(Path::new("."));
            manifest
                .rounds
                .iter()
                .map(|r| (dir.join(&r.checkpoint), r.lambda))
                .unzip()
        }
        None => opts.checkpoints.iter().map(|p| (p.clone(), 1.0)).unzip(),
    };
    if paths.is_empty() {
        return Err(Error::Config("eval needs at least one checkpoint or --manifest".into()));
    }
    let lambdas = if opts.uniform_lambda { vec![1.0; paths.len()] } else { lambdas };
    if let Some(mu) = opts.mu {
        if !(mu >= 0.0) {
            return Err(Error::Config(format!("mu must be non-negative, got {mu}")));
        }
    }
    let (_, raw_test) = opts.data.load_raw()?;
    let mut members = Vec::with_capacity(paths.len());
    let mut outputs = Vec::with_capacity(paths.len());
    for (path, &lambda) in paths.iter().zip(&lambdas) {
        let (net, meta) = load_network(path)?;
        if net.input_shape() != raw_test.image_shape() || meta.arch.num_classes != raw_test.num_classes {
            return Err(Error::Config(format!(
                "{} was trained on {:?} inputs with {} classes; the test set has {:?} and {}",
                path.display(),
                net.input_shape(),
                meta.arch.num_classes,
                raw_test.image_shape(),
                raw_test.num_classes
            )));
        }
        let policy = AugmentPolicy {
            channel_mean: meta.channel_mean.clone(),
            channel_std: meta.channel_std.clone(),
            ..AugmentPolicy::identity(raw_test.image_shape()[1], raw_test.image_shape()[0])
        };
        let test = normalize(&raw_test, &policy)?;
        let mu = opts.mu.unwrap_or(meta.mu);
        let hw = HeadWeights::new(meta.alpha1, meta.k, mu, net.num_heads())?;
        let report = evaluate(&net, &test, &hw, opts.exec)?;
        members.push(MemberEval {
            checkpoint: path.clone(),
            lambda,
            mu,
            head_errors: report.head_errors.clone(),
            joint_error: report.joint_error,
        });
        outputs.push(report.joint_output);
    }
    let ensemble_error = error_rate(&joint_network_output(&outputs, &lambdas)?, &raw_test.labels)?;
    Ok(EvalSummary {
        test_samples: raw_test.len(),
        members,
        ensemble_error,
    })
}
