//! `corrinit`: seeded experiments for correlated filter initialization.
//!
//! Every subcommand writes its data files plus a `<tag>.manifest.json` into
//! the output directory (`--out-dir`, or `CORRINIT_OUT_DIR`). Exit codes: 0
//! on success, 2 on usage errors, 1 on runtime failures.

mod cmd;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use manifest::{Outputs, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "corrinit", version, about = "Correlated filter initialization experiments")]
pub struct Cli {
    /// Directory for all output files.
    #[arg(long, global = true, env = "CORRINIT_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a layer tensor with correlated or uncorrelated filters.
    Init(cmd::init::InitArgs),
    /// Simulate gradient descent of the two-weight ReLU filter.
    Dynamics(cmd::dynamics::DynamicsArgs),
    /// Monte Carlo sweep of multi-layer output magnitude.
    Propagate(cmd::propagate::PropagateArgs),
    /// Distance-correlation profiles of layer tensor files.
    Analyze(cmd::analyze::AnalyzeArgs),
    /// Train toy CNNs on teacher-generated data.
    Train(cmd::train::TrainArgs),
    /// Re-run the command recorded in a manifest.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<corrinit_core::Error> for CliError {
    fn from(e: corrinit_core::Error) -> Self {
        use corrinit_core::Error;
        match e {
            Error::InvalidParameter { name, reason } => {
                CliError::Usage(format!("invalid value for --{}: {reason}", name.replace('_', "-")))
            }
            Error::EmptyLocations { k } => {
                CliError::Usage(format!("--strategy has no filter positions for --k {k}"))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn execute(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    if let Command::Rerun { manifest } = &cli.command {
        let recorded = RunManifest::load(manifest)?;
        let mut replay = Cli::try_parse_from(&recorded.argv)
            .map_err(|e| CliError::Runtime(format!("manifest argv does not parse: {e}")))?;
        if matches!(replay.command, Command::Rerun { .. }) {
            return Err(CliError::Runtime("manifest records another rerun".into()));
        }
        replay.out_dir = cli.out_dir;
        return execute(replay, recorded.argv);
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    let start = Instant::now();
    let mut outputs = Outputs::new(&cli.out_dir);
    let (name, tag, seed, params) = match &cli.command {
        Command::Init(a) => ("init", a.tag.clone(), Some(a.seed), cmd::init::run(a, &mut outputs)?),
        Command::Dynamics(a) => ("dynamics", a.tag.clone(), None, cmd::dynamics::run(a, &mut outputs)?),
        Command::Propagate(a) => ("propagate", a.tag.clone(), Some(a.seed), cmd::propagate::run(a, &mut outputs)?),
        Command::Analyze(a) => ("analyze", a.tag.clone(), None, cmd::analyze::run(a, &mut outputs)?),
        Command::Train(a) => ("train", a.tag.clone(), Some(a.seed_offset), cmd::train::run(a, &mut outputs)?),
        Command::Rerun { .. } => unreachable!(),
    };
    let manifest = RunManifest {
        subcommand: name.to_string(),
        params,
        argv,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: outputs.names(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let path = cli.out_dir.join(format!("{tag}.manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    eprintln!("wrote {} files and {}", manifest.outputs.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
