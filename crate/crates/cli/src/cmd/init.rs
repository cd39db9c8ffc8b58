use clap::{Args, ValueEnum};
use corrinit_core::init::{empirical_layer_variance, layer_init, uncorrelated_layer};
use corrinit_core::{DecayProfile, InitSpec, LocationStrategy, Scaling, StrengthDraw};
use serde::Serialize;

use super::unit_interval;
use crate::manifest::Outputs;
use crate::CliResult;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    All,
    Cen,
    Nei,
}

impl From<StrategyArg> for LocationStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::All => LocationStrategy::All,
            StrategyArg::Cen => LocationStrategy::Center,
            StrategyArg::Nei => LocationStrategy::Neighbor,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingArg {
    AsWritten,
    VarianceCorrected,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrengthArg {
    Uniform,
    TwoPoint,
}

/// Flags shared by every command that builds an [`InitSpec`].
#[derive(Debug, Clone, Args, Serialize)]
pub struct SpecArgs {
    /// Location set for the representation center.
    #[arg(long, value_enum, default_value = "nei")]
    pub strategy: StrategyArg,
    /// Weight of the independent noise matrix.
    #[arg(long, default_value_t = 0.05, value_parser = unit_interval)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "as-written")]
    pub scaling: ScalingArg,
    #[arg(long, value_enum, default_value = "uniform")]
    pub strength: StrengthArg,
    /// Decay factors g(1),g(sqrt2),g(2),g(sqrt5),g(sqrt8),g(other).
    #[arg(long, value_delimiter = ',', num_args = 6, value_parser = unit_interval)]
    pub decay: Option<Vec<f64>>,
}

impl SpecArgs {
    pub fn template(&self) -> InitSpec {
        let decay = match &self.decay {
            Some(d) => DecayProfile {
                a1: d[0],
                a_sqrt2: d[1],
                a2: d[2],
                a_sqrt5: d[3],
                a_sqrt8: d[4],
                a_other: d[5],
            },
            None => DecayProfile::default(),
        };
        InitSpec {
            strategy: self.strategy.into(),
            alpha: self.alpha,
            scaling: match self.scaling {
                ScalingArg::AsWritten => Scaling::AsWritten,
                ScalingArg::VarianceCorrected => Scaling::VarianceCorrected,
            },
            strength: match self.strength {
                StrengthArg::Uniform => StrengthDraw::Uniform,
                StrengthArg::TwoPoint => StrengthDraw::TwoPoint,
            },
            decay,
            ..InitSpec::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InitArgs {
    /// Filter side length (odd).
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub filters: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Independent uniform entries instead of correlated filters.
    #[arg(long)]
    pub uncorrelated: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prefix of the output file names.
    #[arg(long, default_value = "init")]
    pub tag: String,
}

pub fn run(args: &InitArgs, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let tensor = if args.uncorrelated {
        uncorrelated_layer(args.filters, args.channels, args.k, args.seed)?
    } else {
        let spec = InitSpec {
            seed: args.seed,
            ..args.spec.template()
        };
        let spec = InitSpec {
            k: args.k,
            n_l: args.filters * args.channels * args.k * args.k,
            ..spec
        };
        layer_init(args.filters, args.channels, &spec)?
    };
    outputs.write(format!("{}.json", args.tag), tensor.to_json_string()?.as_bytes())?;
    let data = tensor.data();
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let variance = empirical_layer_variance(&tensor)
        .map(|v| format!("{v:.6e}"))
        .unwrap_or_else(|_| "undefined".into());
    println!("shape {:?}, values {}", tensor.shape(), data.len());
    println!("empirical variance {variance}, min {min:.6}, max {max:.6}");
    Ok(serde_json::to_value(args)?)
}
