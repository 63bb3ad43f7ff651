//! Desk-scale comparison tables over several seeds.

use std::fmt::Write as _;
use std::fs;

use serde::{Deserialize, Serialize};

use super::config::{ConfigSnapshot, RunConfig, CODE_VERSION};
use crate::data::{AugmentPolicy, LabeledImageSet};
use crate::error::Result;
use crate::joint::{boost_train, BoostConfig, HeadWeights, SampleWeightTable};
use crate::nn::{build_multihead, scale_channels, ArchSpec, MultiHeadNetwork, ScalingFactor};
use crate::train::{evaluate, member_init_seed, train_network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Single network with and without auxiliary heads.
    Table1,
    /// Boosted ensembles of channel-scaled members.
    Table2,
    /// Plain network against heads plus boosting at matched size.
    Table3,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Table1 => "toy-table1",
            Profile::Table2 => "toy-table2",
            Profile::Table3 => "toy-table3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceRow {
    pub group: String,
    pub variant: String,
    pub params: usize,
    /// Test error per seed, in seed order.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Prepared {
    train: LabeledImageSet,
    test: LabeledImageSet,
    policy: AugmentPolicy,
}

fn train_single(cfg: &RunConfig, p: &Prepared, arch: &ArchSpec, m: usize, seed: u64) -> Result<MultiHeadNetwork> {
    let mut c = cfg.clone();
    c.m = m;
    c.seed = seed;
    let mut net = build_multihead(arch, m, c.head_order, member_init_seed(seed, 0))?;
    let tc = c.train_config(p.policy.clone())?;
    train_network(&mut net, &p.train, &p.test, &SampleWeightTable::uniform(p.train.len()), &tc, |_| Ok(()))?;
    Ok(net)
}

fn boost(cfg: &RunConfig, p: &Prepared, arch: &ArchSpec, m: usize, gamma: usize, seed: u64) -> Result<Vec<f64>> {
    let mut c = cfg.clone();
    c.m = m;
    c.seed = seed;
    let bc = BoostConfig {
        gamma,
        epsilon: c.epsilon,
        mode: c.reweight_mode(),
        judge: c.judge,
        arch: arch.clone(),
        m,
        order: c.head_order,
        train: c.train_config(p.policy.clone())?,
        out_dir: None,
        channel_mean: p.policy.channel_mean.clone(),
        channel_std: p.policy.channel_std.clone(),
        code_version: CODE_VERSION.into(),
    };
    let outcome = boost_train(&p.train, &p.test, &bc, |_| Ok(()))?;
    Ok(outcome.manifest.rounds.iter().map(|r| r.joint_test_error).collect())
}

fn row(group: &str, variant: &str, params: usize, errors: Vec<f64>) -> ReproduceRow {
    let (mean, std) = mean_std(&errors);
    ReproduceRow {
        group: group.into(),
        variant: variant.into(),
        params,
        errors,
        mean,
        std,
    }
}

fn scaled(base: &ArchSpec, factor: f64) -> Result<ArchSpec> {
    Ok(scale_channels(base, ScalingFactor::new(factor)?))
}

/// Run `profile` for seeds `base.seed .. base.seed + seeds` and write
/// `<profile>.csv` plus a config snapshot to `base.out`.
pub fn cmd_reproduce(profile: Profile, base: &RunConfig, seeds: u64) -> Result<Vec<ReproduceRow>> {
    base.validate(false)?;
    if seeds == 0 {
        return Err(crate::Error::Config("need at least one seed".into()));
    }
    let (train, test, policy) = base.load_prepared()?;
    let p = Prepared { train, test, policy };
    let seed_list: Vec<u64> = (base.seed..base.seed + seeds).collect();
    let mut rows = Vec::new();

    match profile {
        Profile::Table1 => {
            for arch_name in ["res-tiny", "vgg-tiny"] {
                let mut c = base.clone();
                c.arch = arch_name.into();
                let arch = c.base_arch()?;
                let m = arch.num_parts();
                let (mut plain, mut mu1, mut mu_half) = (vec![], vec![], vec![]);
                for &s in &seed_list {
                    log::info!("{arch_name}, seed {s}");
                    let net = train_single(&c, &p, &arch, 1, s)?;
                    plain.push(evaluate(&net, &p.test, &HeadWeights::new(c.alpha1, c.k, 0.0, 1)?, c.exec())?.joint_error);
                    let net = train_single(&c, &p, &arch, m, s)?;
                    let hw = HeadWeights::new(c.alpha1, c.k, 1.0, m)?;
                    mu1.push(evaluate(&net, &p.test, &hw, c.exec())?.joint_error);
                    mu_half.push(evaluate(&net, &p.test, &hw.with_mu(0.5), c.exec())?.joint_error);
                }
                rows.push(row(arch_name, "baseline", arch.param_count(1), plain));
                rows.push(row(arch_name, "mu=1", arch.param_count(m), mu1));
                rows.push(row(arch_name, "mu=1/2", arch.param_count(m), mu_half));
            }
        }
        Profile::Table2 => {
            let full = base.base_arch()?;
            for (label, factor) in [("1", 1.0), ("sqrt(1/2)", 0.5f64.sqrt()), ("1/2", 0.5)] {
                let arch = scaled(&full, factor)?;
                let mut per_gamma = vec![Vec::new(); 4];
                for &s in &seed_list {
                    log::info!("scale {label}, seed {s}");
                    for (g, e) in boost(base, &p, &arch, 1, 4, s)?.into_iter().enumerate() {
                        per_gamma[g].push(e);
                    }
                }
                for (g, errors) in per_gamma.into_iter().enumerate() {
                    let params = (g + 1) * arch.param_count(1);
                    rows.push(row(&format!("scale {label}"), &format!("gamma={}", g + 1), params, errors));
                }
            }
        }
        Profile::Table3 => {
            let full = base.base_arch()?;
            let member = scaled(&full, 0.5f64.sqrt())?;
            let m = member.num_parts();
            let (mut plain, mut combined) = (vec![], vec![]);
            for &s in &seed_list {
                log::info!("seed {s}");
                let net = train_single(base, &p, &full, 1, s)?;
                plain.push(evaluate(&net, &p.test, &HeadWeights::new(base.alpha1, base.k, 0.0, 1)?, base.exec())?.joint_error);
                combined.push(*boost(base, &p, &member, m, 2, s)?.last().expect("gamma 2"));
            }
            rows.push(row(&base.arch, "baseline", full.param_count(1), plain));
            rows.push(row(&base.arch, "heads+boost gamma=2", 2 * member.param_count(m), combined));
        }
    }

    fs::create_dir_all(&base.out)?;
    let snap = ConfigSnapshot {
        command: format!("reproduce {}", profile.name()),
        code_version: CODE_VERSION.into(),
        config: base.clone(),
    };
    fs::write(base.out.join("config.json"), serde_json::to_string_pretty(&snap)? + "\n")?;
    let mut w = csv::Writer::from_path(base.out.join(format!("{}.csv", profile.name())))?;
    w.write_record(["group", "variant", "params", "mean_error", "std_error", "errors"])?;
    for r in &rows {
        let errors: Vec<String> = r.errors.iter().map(f64::to_string).collect();
        w.write_record([
            r.group.clone(),
            r.variant.clone(),
            r.params.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            errors.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn render_table(profile: Profile, rows: &[ReproduceRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} (test error %, mean ± std over {} seeds)", profile.name(), rows.first().map_or(0, |r| r.errors.len()));
    let _ = writeln!(s, "{:<16} {:<22} {:>10} {:>16}", "group", "variant", "params", "error");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:<22} {:>10} {:>8.2} ± {:<5.2}",
            r.group,
            r.variant,
            r.params,
            100.0 * r.mean,
            100.0 * r.std
        );
    }
    s
}
