//! `gwdet` — two-detector search pipeline driver.
//!
//! Subcommands chain synth -> train-cnn -> extract-features -> train-rf ->
//! search -> evaluate; `all` runs the lot. Exit codes: 0 success, 2 config
//! error, 3 missing input, 4 numeric/runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gwdet_core::cnn::Variant;
use gwdet_core::config::{DatasetKind, PipelineConfig, ScorerKind};
use gwdet_core::{pipeline, Error};

#[derive(Parser)]
#[command(name = "gwdet", version, about = "Hybrid CNN + random-forest search over synthetic two-detector strain")]
struct Cli {
    /// TOML configuration file (defaults reproduce the desk-scale run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset (d1, d2, or the d3 recording pair).
    Synth {
        #[arg(long)]
        kind: String,
    },
    /// Train a network variant (baseline, half, third).
    TrainCnn {
        #[arg(long, default_value = "baseline")]
        variant: String,
    },
    /// Extract the five-feature table from d2 with the baseline network.
    ExtractFeatures,
    /// Train the random forest on the extracted features.
    TrainRf,
    /// Sliding-window search over the d3 pair.
    Search {
        /// Scorer to run (cnn, cnn_rf, cnn_half, cnn_third); defaults to
        /// every scorer named in the configuration.
        #[arg(long)]
        scorer: Option<String>,
    },
    /// Assemble the report from completed searches.
    Evaluate,
    /// Run every stage in order.
    All,
}

fn parse_variant(s: &str) -> Result<Variant, Error> {
    match s {
        "baseline" => Ok(Variant::Baseline),
        "half" => Ok(Variant::Half),
        "third" => Ok(Variant::Third),
        other => Err(Error::Parameter(format!(
            "unknown variant `{other}` (expected baseline, half, third)"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    pipeline::init_threads(cfg.threads);

    match cli.command {
        Command::Synth { kind } => pipeline::cmd_synth(&cfg, DatasetKind::parse(&kind)?),
        Command::TrainCnn { variant } => {
            pipeline::cmd_train_cnn(&cfg, parse_variant(&variant)?).map(|_| ())
        }
        Command::ExtractFeatures => pipeline::cmd_extract_features(&cfg),
        Command::TrainRf => pipeline::cmd_train_rf(&cfg),
        Command::Search { scorer } => {
            let scorers = match scorer {
                Some(s) => vec![ScorerKind::parse(&s)?],
                None => cfg.search.scorers.clone(),
            };
            pipeline::cmd_search(&cfg, &scorers)
        }
        Command::Evaluate => pipeline::cmd_evaluate(&cfg),
        Command::All => pipeline::cmd_all(&cfg),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) | Error::Format(_) | Error::Length(_) | Error::Shape(_) => 2,
        Error::MissingInput(_) => 3,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
        Error::SingularPsd(_) | Error::Numeric(_) | Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
