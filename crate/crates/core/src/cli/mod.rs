//! `bench-validity` command line.
//!
//! With `--out DIR` every command writes its files plus a `manifest.json`
//! (config hash, seeds, input and output sha256 digests); without it the
//! primary output goes to stdout. Errors are reported on stderr as one JSON
//! object and mapped to exit codes 2 (input or configuration), 3 (numerical
//! failure) and 4 (unsatisfiable query).

mod commands;
pub mod manifest;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kstat::{Knob, PipelineConfig};
use crate::training::{Architecture, BatchMode, Objective, TrainConfig};
use crate::validity::{Family, Thresholds};

#[derive(Debug, Parser)]
#[command(
    name = "bench-validity",
    version,
    about = "Benchmark validity and method selection for spurious-correlation benchmarks"
)]
pub struct Cli {
    /// Directory for output files and the run manifest (stdout if omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps and leave-one-out rows.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Linear,
    Mlp1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum RobustnessTarget {
    LearningRate,
    BatchSize,
    /// K(reweight) against K(groupdro).
    Reference,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    match Objective::from_str(s) {
        Ok(Objective::Erm) => Err("reference must be reweight or groupdro".into()),
        Ok(o) => Ok(o),
        Err(e) => Err(e.to_string()),
    }
}

/// Parsed `--seeds` value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seed_list(s: &str) -> std::result::Result<SeedList, String> {
    parse_seeds(s).map(SeedList)
}

/// `a..b` (inclusive), `a,b,c`, or a single seed.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let num = |v: &str| v.trim().parse::<u64>().map_err(|_| format!("`{v}` is not a seed"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty seed range `{s}`"));
        }
        Ok((a..=b).collect())
    } else {
        s.split(',').map(num).collect()
    }
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Single seed (overrides the config's seed).
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed list: `a..b` inclusive or comma separated.
    #[arg(long, value_parser = parse_seed_list)]
    pub seeds: Option<SeedList>,
}

impl SeedArgs {
    fn resolve(&self, config_seed: u64) -> Vec<u64> {
        match (&self.seeds, self.seed) {
            (Some(s), _) => s.0.clone(),
            (None, Some(s)) => vec![s],
            (None, None) => vec![config_seed],
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "linear")]
    pub arch: ArchKind,
    /// Hidden width for `--arch mlp1`.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size (full batch if omitted).
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub groupdro_step: Option<f64>,
}

impl TrainArgs {
    fn pipeline(&self) -> Result<PipelineConfig> {
        let mut train = TrainConfig::default();
        if let Some(lr) = self.lr {
            train.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            train.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            train.batch_mode = BatchMode::Minibatch(b);
        }
        if let Some(p) = self.patience {
            train.patience = p;
        }
        if let Some(s) = self.groupdro_step {
            train.groupdro_step = s;
        }
        train.validate()?;
        let architecture = match self.arch {
            ArchKind::Linear => Architecture::Linear,
            ArchKind::Mlp1 => {
                if self.hidden == 0 {
                    return Err(Error::config("hidden", "must be >= 1"));
                }
                Architecture::Mlp1 { hidden: self.hidden }
            }
        };
        Ok(PipelineConfig { architecture, train })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic grouped dataset.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate K on a synthetic config.
    K {
        config: PathBuf,
        #[arg(long, default_value = "reweight", value_parser = parse_objective)]
        reference: Objective,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, value_enum)]
        aggregate: Option<Aggregate>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// K over a grid of one data knob and several seeds.
    Sweep {
        base: PathBuf,
        #[arg(long, value_parser = |s: &str| Knob::from_str(s).map_err(|e| e.to_string()))]
        knob: Knob,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, default_value = "reweight", value_parser = parse_objective)]
        reference: Objective,
        #[arg(long, value_enum)]
        aggregate: Option<Aggregate>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Correlation of K across training settings over probe configs.
    Robustness {
        base: PathBuf,
        #[arg(long, value_enum)]
        hyper: RobustnessTarget,
        /// Settings to compare (learning rates or batch sizes).
        #[arg(long, value_delimiter = ',')]
        settings: Vec<f64>,
        /// Setting whose K vector the others are correlated against.
        #[arg(long)]
        reference_setting: Option<f64>,
        /// Confounder strengths of the probe configs; probe i uses seed + i.
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,0.95")]
        rhos: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "reweight", value_parser = parse_objective)]
        reference: Objective,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Validity report from results tables, or from precomputed statistics.
    Validate {
        #[arg(long, required_unless_present = "stats", requires_all = ["groups", "k"])]
        results: Option<PathBuf>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        k: Option<PathBuf>,
        /// Precomputed statistics table instead of raw results.
        #[arg(long, conflicts_with_all = ["results", "groups", "k"])]
        stats: Option<PathBuf>,
        #[arg(long, default_value = "2,2.5,0.1", value_parser = |s: &str| Thresholds::from_str(s).map_err(|e| e.to_string()))]
        thresholds: Thresholds,
    },
    /// Pairwise benchmark agreement and method ranks.
    Agreement {
        #[arg(long)]
        results: PathBuf,
        /// Adds `abs_dk` per benchmark pair.
        #[arg(long)]
        k: Option<PathBuf>,
    },
    /// Recommend a method for a dataset, or run leave-one-out with `--loo`.
    Recommend {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        k: PathBuf,
        /// Report from `validate` (JSON, or its CSV table).
        #[arg(long)]
        validity: PathBuf,
        /// K of the dataset needing a method (read from `--k` when omitted
        /// and `--test-dataset` names a listed benchmark).
        #[arg(long, allow_hyphen_values = true)]
        test_k: Option<f64>,
        #[arg(long, value_parser = |s: &str| Family::from_str(s).map_err(|e| e.to_string()))]
        test_family: Option<Family>,
        /// Name of the dataset needing a method; it is left out of every
        /// averaging pool and of the closest-benchmark search.
        #[arg(long)]
        test_dataset: Option<String>,
        #[arg(long, conflicts_with_all = ["test_k", "test_family", "test_dataset"])]
        loo: bool,
    },
    /// Median, IQR and R² vs K per method.
    Profiles {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        k: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    exit_code: i32,
    message: String,
}

fn error_kind(e: &Error) -> &'static str {
    match e.root() {
        Error::Config { .. } => "config",
        Error::EmptySplit(_) | Error::EmptyGroup { .. } => "empty",
        Error::DimensionMismatch { .. } => "dimension",
        Error::NonFinite { .. } => "non_finite",
        Error::Divergence { .. } => "divergence",
        Error::Degenerate(_) => "degenerate",
        Error::Unsatisfiable(_) => "unsatisfiable",
        Error::Schema { .. } => "schema",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
        Error::Context { .. } => unreachable!("root strips context"),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(n) => {
            if n == 0 {
                return Err(Error::config("threads", "must be >= 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            pool.install(|| commands::dispatch(&cli))
        }
        None => commands::dispatch(&cli),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let report = ErrorReport {
                error: ErrorBody {
                    kind: error_kind(&e),
                    exit_code: code,
                    message: e.to_string(),
                },
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            code
        }
    }
}
