//! The `jointdec` command line: `train`, `boost`, `eval` and `reproduce`.

mod commands;
mod config;
mod metrics;
mod reproduce;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{cmd_boost, cmd_eval, cmd_train, EvalOptions, EvalSummary, MemberEval, RunSummary};
pub use config::{ConfigSnapshot, Dataset, RunConfig, CODE_VERSION};
pub use metrics::{MetricsWriter, METRICS_HEADER};
pub use reproduce::{cmd_reproduce, mean_std, Profile, ReproduceRow};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "jointdec", version, about = "Multi-head and boosted CNN ensembles with joint decisions")]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one multi-head network.
    Train(RunArgs),
    /// Train a boosted ensemble of multi-head members.
    Boost(RunArgs),
    /// Evaluate checkpoints or a boosting manifest on the test split.
    Eval(EvalArgs),
    /// Run a scaled-down comparison table over several seeds.
    Reproduce(ReproduceArgs),
}

/// Flags shared by `train`, `boost` and `reproduce`. Each overrides the
/// matching key of `--config`.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<String>,
    #[arg(long)]
    pub data_seed: Option<String>,
    /// Toy training-set size.
    #[arg(long)]
    pub toy_train: Option<String>,
    #[arg(long)]
    pub toy_test: Option<String>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub alpha1: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr_max: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Swap the reweighting factors so correct samples lose weight.
    #[arg(long)]
    pub intent_mode: bool,
    #[arg(long)]
    pub head_order: Option<String>,
    /// `joint` or `head1`: which prediction marks a sample correct when reweighting.
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long)]
    pub no_augment: bool,
    /// Disable the data-parallel inner loops.
    #[arg(long)]
    pub sequential: bool,
}

impl RunArgs {
    fn overrides(&self) -> BTreeMap<&'static str, String> {
        let mut o = BTreeMap::new();
        let pairs: [(&'static str, &Option<String>); 21] = [
            ("dataset", &self.dataset),
            ("data-dir", &self.data_dir),
            ("data-seed", &self.data_seed),
            ("toy-train", &self.toy_train),
            ("toy-test", &self.toy_test),
            ("arch", &self.arch),
            ("scale", &self.scale),
            ("m", &self.m),
            ("mu", &self.mu),
            ("k", &self.k),
            ("alpha1", &self.alpha1),
            ("epsilon", &self.epsilon),
            ("gamma", &self.gamma),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("lr-max", &self.lr_max),
            ("weight-decay", &self.weight_decay),
            ("seed", &self.seed),
            ("out", &self.out),
            ("head-order", &self.head_order),
            ("judge", &self.judge),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                o.insert(k, v.clone());
            }
        }
        for (k, on) in [("intent-mode", self.intent_mode), ("sequential", self.sequential)] {
            if on {
                o.insert(k, "true".into());
            }
        }
        if self.no_augment {
            o.insert("augment", "false".into());
        }
        o
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(&self.overrides())?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Network checkpoints; with several, they are combined with equal weights.
    pub checkpoints: Vec<PathBuf>,
    /// Boosting manifest; members and λ are read from it.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Override the auxiliary-head factor used in the combined output.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Give every member the same weight instead of the stored λ.
    #[arg(long)]
    pub uniform_lambda: bool,
    /// Dataset settings; defaults to the `config.json` next to the first input.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<String>,
    #[arg(long)]
    pub data_seed: Option<String>,
    #[arg(long)]
    pub toy_train: Option<String>,
    #[arg(long)]
    pub toy_test: Option<String>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    #[value(name = "toy-table1")]
    Table1,
    #[value(name = "toy-table2")]
    Table2,
    #[value(name = "toy-table3")]
    Table3,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub profile: ProfileArg,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let s = cmd_train(&args.resolve()?)?;
            println!("{}", s.render());
        }
        Command::Boost(args) => {
            let s = cmd_boost(&args.resolve()?)?;
            println!("{}", s.render());
        }
        Command::Eval(args) => {
            let json = args.json;
            let report = cmd_eval(&EvalOptions::from_args(args)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render());
            }
        }
        Command::Reproduce(args) => {
            let profile = match args.profile {
                ProfileArg::Table1 => Profile::Table1,
                ProfileArg::Table2 => Profile::Table2,
                ProfileArg::Table3 => Profile::Table3,
            };
            let cfg = args.run.resolve()?;
            let rows = cmd_reproduce(profile, &cfg, args.seeds)?;
            print!("{}", reproduce::render_table(profile, &rows));
        }
    }
    Ok(())
}
