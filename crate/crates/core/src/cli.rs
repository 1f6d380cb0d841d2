//! The `score` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::artifact::write_atomic;
use crate::config::RunConfig;
use crate::corpus::{write_metadata, write_records};
use crate::error::{Error, Result};
use crate::experiment;
use crate::synth::{planted_clusters, planted_signal, two_block, PlantedSignalSpec};

#[derive(Debug, Parser)]
#[command(name = "score", version, about = "Retrieve-rerank collaborative context for LLM recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; relative paths inside resolve against its directory.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the artifacts directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set inference.k_s=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthKind {
    PlantedSignal,
    TwoBlock,
    Clusters,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read raw data, apply filters, write the normalised corpus.
    Ingest(Common),
    /// Temporal train/val/test split.
    Split(Common),
    /// Train the collaborative model (BPR matrix factorisation).
    TrainCrm(Common),
    /// Train the collaborative retriever adapter.
    TrainCar(Common),
    /// Build the exact behaviour index.
    Index(Common),
    /// Generate self-assessments for sampled training pairs.
    Assess(Common),
    /// Train the self-assessing reranker adapter.
    TrainSare(Common),
    /// Score every labelled test pair.
    Predict(Common),
    /// Compute AUC / UAUC and write the report.
    Evaluate(Common),
    /// Every stage in order.
    Run(Common),
    /// Print the effective configuration.
    Config(Common),
    /// Write a synthetic corpus and a matching config.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "planted-signal")]
        kind: SynthKind,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::from_toml("", &overrides, Path::new("."))?,
    };
    if let Some(out) = &common.out {
        cfg.paths.artifacts = out.clone();
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(common: &Common, kind: SynthKind) -> Result<()> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = common.seed.unwrap_or(7);
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let (records, items) = match kind {
        SynthKind::PlantedSignal => {
            let d = planted_signal(&PlantedSignalSpec { seed, ..PlantedSignalSpec::default() });
            cfg.data.train_end = Some(d.train_end - 1);
            cfg.data.val_end = Some(d.val_end - 1);
            (d.records, d.items)
        }
        SynthKind::TwoBlock => {
            let d = two_block(seed);
            (d.records, d.items)
        }
        SynthKind::Clusters => {
            let d = planted_clusters(8, seed);
            (d.records, d.items)
        }
    };
    let mut buf = Vec::new();
    write_records(&records, &mut buf).map_err(|e| Error::io(&dir, e))?;
    write_atomic(dir.join("interactions.tsv"), &buf)?;
    let mut buf = Vec::new();
    write_metadata(&items, &mut buf).map_err(|e| Error::io(&dir, e))?;
    write_atomic(dir.join("items.tsv"), &buf)?;
    cfg.paths.interactions = "interactions.tsv".into();
    cfg.paths.items = "items.tsv".into();
    write_atomic(dir.join("score.toml"), cfg.to_toml().as_bytes())?;
    println!("wrote {} interactions and {} items to {}", records.len(), items.len(), dir.display());
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { common, kind } => synth(&common, kind),
        Command::Config(c) => {
            print!("{}", load_config(&c)?.to_toml());
            Ok(())
        }
        Command::Ingest(c) => print_json(&experiment::ingest(&load_config(&c)?)?),
        Command::Split(c) => print_json(&experiment::split(&load_config(&c)?)?),
        Command::TrainCrm(c) => {
            let r = experiment::train_crm(&load_config(&c)?)?;
            print_json(&serde_json::json!({
                "final_epoch_loss": r.epoch_losses.last(),
                "epochs": r.epoch_losses.len(),
            }))
        }
        Command::TrainCar(c) => {
            let r = experiment::train_car(&load_config(&c)?)?;
            print_json(&serde_json::json!({
                "initial_loss": r.initial_loss,
                "final_loss": r.final_loss,
            }))
        }
        Command::Index(c) => print_json(&experiment::build_index(&load_config(&c)?)?),
        Command::Assess(c) => print_json(&experiment::assess(&load_config(&c)?)?),
        Command::TrainSare(c) => {
            let r = experiment::train_sare(&load_config(&c)?)?;
            print_json(&serde_json::json!({
                "rankings": r.rankings,
                "instances": r.report.instances,
                "initial_loss": r.report.initial_loss,
                "final_loss": r.report.final_loss,
            }))
        }
        Command::Predict(c) => print_json(&experiment::predict(&load_config(&c)?)?),
        Command::Evaluate(c) => print_json(&experiment::evaluate_predictions(&load_config(&c)?)?),
        Command::Run(c) => print_json(&experiment::run_experiment(&load_config(&c)?)?),
    }
}

/// Parses `argv` (program name first) and runs the command; returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
