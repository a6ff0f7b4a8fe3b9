//! `rgm`: command-line driver for data generation, training, the convex
//! representer program, GW bounds, evaluation, pushforward sampling and plots.
//!
//! Every command takes `--config <file>`, `--seed <n>`, `--out <dir>` and any
//! number of `--override key=value`, writes its artifacts plus `report.json` into
//! the output directory and prints the report. Exit code 0 is success, 2 a
//! configuration or input problem, 3 a numerical failure.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::config::{load_value, parse};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rgm_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "rgm", version, about = "Reversible Gromov-Monge experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated or converted point cloud as CSV.
    Gen(Common),
    /// Train forward and backward maps on the Lagrangian.
    Train(Common),
    /// Solve the convex representer program.
    Convex(Common),
    /// FLB², SLB², entropic GW and (tiny inputs) the Gromov-Monge value.
    Bounds(Common),
    /// Evaluate a checkpoint on data.
    Eval(Common),
    /// Push samples through a trained map.
    Push(Common),
    /// Render a trace, clouds or a cost-alignment scatter as SVG.
    Plot(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; an empty object when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shorthand for `--override seed=<n>`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replace the config value at a dotted path, e.g. `train.iterations=100`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    config: &'a Value,
    results: &'a Value,
    wall_clock_seconds: f64,
    seed: u64,
}

fn run(name: &str, common: &Common) -> Result<String, CliError> {
    let value = load_value(common.config.as_deref(), &common.overrides, common.seed)?;
    let out = &common.out;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let start = Instant::now();
    let outcome = match name {
        "gen" => commands::gen(&parse(&value)?, out)?,
        "train" => commands::train_cmd(&parse(&value)?, out)?,
        "convex" => commands::convex(&parse(&value)?, out)?,
        "bounds" => commands::bounds_cmd(&parse(&value)?)?,
        "eval" => commands::eval(&parse(&value)?)?,
        "push" => commands::push(&parse(&value)?, out)?,
        "plot" => commands::plot(&parse(&value)?, out)?,
        other => unreachable!("unknown command {other}"),
    };
    let report = Report {
        command: name,
        config: &value,
        results: &outcome.results,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        seed: outcome.seed,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Core(e.into()))?;
    let path = out.join("report.json");
    std::fs::write(&path, &text).map_err(|source| CliError::Io { path, source })?;
    Ok(text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Gen(c) => ("gen", c),
        Command::Train(c) => ("train", c),
        Command::Convex(c) => ("convex", c),
        Command::Bounds(c) => ("bounds", c),
        Command::Eval(c) => ("eval", c),
        Command::Push(c) => ("push", c),
        Command::Plot(c) => ("plot", c),
    };
    match run(name, common) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rgm {name}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
