//! `gated-reid` command-line driver.
//!
//! Exit status is 0 on success, 1 when the configuration or arguments are
//! invalid, and 2 when a command fails at run time (missing files,
//! divergence, a failed gradient check).

mod commands;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gated_reid::{Error, RunConfig};

pub const ENV_OUT_DIR: &str = "GATED_REID_OUT_DIR";
pub const ENV_THREADS: &str = "GATED_REID_THREADS";

#[derive(Parser, Debug)]
#[command(name = "gated-reid", version, about = "Gated recurrent video features for person re-identification")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides the config file and the environment).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-camera dataset.
    Generate(commands::GenerateArgs),
    /// Train a network on the training split of a dataset.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on the test split and print the CMC table.
    Eval(commands::EvalArgs),
    /// Write per-frame gate images for one clip.
    VisualizeGates(commands::VisualizeArgs),
    /// Check tape adjoints against central finite differences.
    Gradcheck(commands::GradcheckArgs),
}

/// Failure of a command, split by exit status.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Config file, then environment, then `--set`, then `--out`.
fn resolve_config(args: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Failure::Runtime(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
        cfg.set("output_dir", &dir)?;
    }
    if let Ok(n) = std::env::var(ENV_THREADS) {
        cfg.set("threads", &n)?;
    }
    cfg.apply_overrides(&args.overrides)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Generate(a) => commands::generate(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::VisualizeGates(a) => commands::visualize_gates(cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
