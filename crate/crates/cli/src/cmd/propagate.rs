use clap::{Args, ValueEnum};
use corrinit_core::propagation::{
    monte_carlo_expectation_par, write_sweep_csv, PropagationConfig, PropagationMode,
};
use serde::Serialize;

use super::positive;
use crate::manifest::Outputs;
use crate::CliResult;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Correlated,
    Uncorrelated,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct PropagateArgs {
    /// Filter sizes to sweep.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub k: Vec<usize>,
    /// Depths to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub l: Vec<usize>,
    /// Weights are uniform on [-u, u].
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub u: f64,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Seed shared by every cell of the sweep.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "propagate")]
    pub tag: String,
}

pub fn run(args: &PropagateArgs, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let modes: &[PropagationMode] = match args.mode {
        ModeArg::Correlated => &[PropagationMode::Correlated],
        ModeArg::Uncorrelated => &[PropagationMode::Uncorrelated],
        ModeArg::Both => &[PropagationMode::Correlated, PropagationMode::Uncorrelated],
    };
    let mut reports = Vec::new();
    for &k in &args.k {
        for &l in &args.l {
            for &mode in modes {
                let cfg = PropagationConfig {
                    k,
                    l,
                    u: args.u,
                    mode,
                    trials: args.trials as usize,
                    seed: args.seed,
                };
                let r = monte_carlo_expectation_par(&cfg)?;
                println!(
                    "k={k} l={l} {:<12} estimate {:.6} +- {:.6}  closed form {:.6}",
                    mode.name(),
                    r.mc_estimate,
                    r.mc_stderr,
                    r.closed_form_corrected
                );
                reports.push(r);
            }
        }
    }
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &reports)?;
    outputs.write(format!("{}.csv", args.tag), &csv)?;
    outputs.write(
        format!("{}.json", args.tag),
        (serde_json::to_string_pretty(&reports)? + "\n").as_bytes(),
    )?;
    Ok(serde_json::to_value(args)?)
}
