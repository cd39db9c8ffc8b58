use clap::{Args, ValueEnum};
use corrinit_core::dynamics::{run as run_dynamics, DynamicsConfig, RunSummary, StepMode, TwoSampleSystem};
use serde::Serialize;

use super::non_negative;
use crate::manifest::Outputs;
use crate::CliResult;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Generic,
    Corrected,
    Paper,
}

#[derive(Debug, Args, Serialize)]
pub struct DynamicsArgs {
    #[arg(long, default_value_t = 0.2)]
    pub d0: f64,
    #[arg(long, default_value_t = 0.1)]
    pub d1: f64,
    /// First coordinate of the optimum; the second is 0.
    #[arg(long, default_value_t = 1.0)]
    pub wstar0: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub w0: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub w1: f64,
    #[arg(long, default_value_t = 0.05, value_parser = non_negative)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "generic")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    /// Convergence threshold on |w - w*|.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value = "dynamics")]
    pub tag: String,
}

pub fn run(args: &DynamicsArgs, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let system = TwoSampleSystem::new(args.d0, args.d1, args.wstar0)?;
    let config = DynamicsConfig {
        max_iters: args.max_iters,
        convergence_eps: args.eps,
        mode: match args.mode {
            ModeArg::Generic => StepMode::GenericGradient,
            ModeArg::Corrected => StepMode::CorrectedRecurrence,
            ModeArg::Paper => StepMode::PaperRecurrence,
        },
        ..DynamicsConfig::new(system, [args.w0, args.w1], args.lambda)
    };
    let trajectory = run_dynamics(&config)?;
    let mut csv = Vec::new();
    trajectory.write_csv(&mut csv)?;
    outputs.write(format!("{}.csv", args.tag), &csv)?;
    let summary = RunSummary::from((&config.w_init, &trajectory));
    outputs.write(
        format!("{}.summary.json", args.tag),
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    println!(
        "iterations {}, converged {}, dead {}, zigzags {:?}",
        trajectory.records.len() - 1,
        trajectory.converged,
        trajectory.dead,
        trajectory.zigzags
    );
    Ok(serde_json::to_value(args)?)
}
