//! Command-line front end: argument parsing, config resolution and dispatch.

mod commands;

pub use commands::{certify_with, Outcome};

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gittins::SweepAxis;
use crate::policies::TableScope;
use crate::simulator::SweepKind;

#[derive(Debug, Parser)]
#[command(name = "cause-bandits", version, about = "Restless Gaussian bandit experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed of every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo runs per regime.
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, env = "CAUSE_BANDITS_THREADS")]
    pub threads: Option<usize>,
    /// TOML file with defaults for any of these options.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Number of arms, a multiple of 4.
    #[arg(long, global = true)]
    pub arms: Option<usize>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    #[arg(long = "ucb-c", global = true)]
    pub ucb_c: Option<f64>,
    #[arg(long = "cause-c", global = true)]
    pub cause_c: Option<f64>,
    #[arg(long = "table-scope", global = true, value_enum)]
    pub table_scope: Option<ScopeArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regret curves of every policy in one regime.
    Regret {
        #[arg(long, default_value = "mixed")]
        regime: String,
    },
    /// Gittins, CAUSE and UCB bonus sweeps along s and v.
    Bonus {
        #[arg(long, value_enum, default_value_t = AxisArg::Both)]
        axis: AxisArg,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Both rested configurations, with a final-regret summary.
    Rested,
    /// Learning-rate and bonus surfaces of healthy and lesioned agents.
    Lesion {
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        reference: Option<ReferenceArg>,
    },
    /// Regret across discounts, arm counts or UCB constants.
    Robustness {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Comma-separated values; defaults depend on the kind.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Monotonicity margins of the numerical Gittins bonus.
    Certify {
        #[arg(long)]
        slack: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Shared,
    PerArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    S,
    V,
    Both,
}

impl AxisArg {
    fn axes(self) -> Vec<SweepAxis> {
        match self {
            AxisArg::S => vec![SweepAxis::S],
            AxisArg::V => vec![SweepAxis::V],
            AxisArg::Both => vec![SweepAxis::S, SweepAxis::V],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Stationary,
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Gamma,
    Arms,
    UcbC,
}

impl From<KindArg> for SweepKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Gamma => SweepKind::Gamma,
            KindArg::Arms => SweepKind::Arms,
            KindArg::UcbC => SweepKind::UcbC,
        }
    }
}

/// Options read from `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub gamma: Option<f64>,
    pub threads: Option<usize>,
    pub arms: Option<usize>,
    pub horizon: Option<usize>,
    pub ucb_c: Option<f64>,
    pub cause_c: Option<f64>,
    pub table_scope: Option<TableScope>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }
}

/// Settings that determine results. Hashed into the metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    pub runs: usize,
    pub gamma: f64,
    pub arms: usize,
    pub horizon: usize,
    pub ucb_c: f64,
    pub cause_c: f64,
    pub table_scope: TableScope,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base_seed: 0,
            runs: crate::simulator::DEFAULT_RUNS,
            gamma: crate::simulator::DEFAULT_GAMMA,
            arms: 4,
            horizon: crate::simulator::DEFAULT_HORIZON,
            ucb_c: 2.0,
            cause_c: crate::cause::DEFAULT_SCALE,
            table_scope: TableScope::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    pub out: PathBuf,
    pub threads: usize,
}

/// Flags win over the config file, which wins over built-in defaults.
pub fn resolve(args: &CommonArgs, file: &FileConfig) -> Resolved {
    let d = ExperimentConfig::default();
    let scope = args.table_scope.map(|s| match s {
        ScopeArg::Shared => TableScope::Shared,
        ScopeArg::PerArm => TableScope::PerArm,
    });
    Resolved {
        experiment: ExperimentConfig {
            base_seed: args.seed.or(file.seed).unwrap_or(d.base_seed),
            runs: args.runs.or(file.runs).unwrap_or(d.runs),
            gamma: args.gamma.or(file.gamma).unwrap_or(d.gamma),
            arms: args.arms.or(file.arms).unwrap_or(d.arms),
            horizon: args.horizon.or(file.horizon).unwrap_or(d.horizon),
            ucb_c: args.ucb_c.or(file.ucb_c).unwrap_or(d.ucb_c),
            cause_c: args.cause_c.or(file.cause_c).unwrap_or(d.cause_c),
            table_scope: scope.or(file.table_scope).unwrap_or(d.table_scope),
        },
        out: args
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("results")),
        threads: args.threads.or(file.threads).unwrap_or(0),
    }
}

/// Parses nothing; runs an already parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let resolved = resolve(&cli.common, &file);
    std::fs::create_dir_all(&resolved.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(&cli.command, &resolved))
}

/// Process exit status for a finished command.
pub fn exit_code(result: &Result<Outcome>) -> u8 {
    match result {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::CertificationFailed) => 4,
        Err(Error::UnknownRegime { .. } | Error::UnknownPolicy { .. } | Error::InvalidInput(_)) => 2,
        Err(Error::SolverConfig(_)) => 3,
        Err(_) => 1,
    }
}
