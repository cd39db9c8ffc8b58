use clap::{Args, ValueEnum};
use corrinit_core::trainer::{
    make_teacher_task, train, DatasetSpec, InitMode, Loss, RunStatus, ToyNetConfig, TrainConfig,
    TrainReport,
};
use corrinit_core::CSV_SCHEMA_LINE;
use rayon::prelude::*;
use serde::Serialize;

use super::init::SpecArgs;
use super::{non_negative, positive};
use crate::manifest::Outputs;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Correlated,
    Uncorrelated,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Quadratic,
    CrossEntropy,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Channels of each conv layer of the student (at most 4 layers).
    #[arg(long, value_delimiter = ',', default_value = "6,6,6,6")]
    pub widths: Vec<usize>,
    /// Teacher conv widths; defaults to the student widths.
    #[arg(long, value_delimiter = ',')]
    pub teacher_widths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Input height and width.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub outputs: usize,
    #[arg(long, default_value_t = 1.5, value_parser = non_negative)]
    pub smooth: f64,
    #[arg(long, default_value_t = 256)]
    pub n_train: usize,
    #[arg(long, default_value_t = 256)]
    pub n_eval: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 0.01, value_parser = non_negative)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    pub lr_decay: f64,
    /// 1-based epochs at which the rate is multiplied by --lr-decay.
    #[arg(long, value_delimiter = ',')]
    pub decay_epochs: Vec<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub l2: f64,
    /// Train once per listed L2 strength instead of --l2.
    #[arg(long, value_delimiter = ',', value_parser = non_negative)]
    pub l2_sweep: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "quadratic")]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value = "correlated")]
    pub init: InitArg,
    /// Train both correlated and uncorrelated students per seed.
    #[arg(long)]
    pub compare_init: bool,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// First seed; run i uses seed offset + i for data, student and shuffle,
    /// and 1000 + seed for the teacher.
    #[arg(long, default_value_t = 0)]
    pub seed_offset: u64,
    #[arg(long, default_value = "train")]
    pub tag: String,
}

struct Job {
    seed: u64,
    init: InitArg,
    l2: f64,
}

impl Job {
    fn stem(&self, tag: &str) -> String {
        let init = match self.init {
            InitArg::Correlated => "corr",
            InitArg::Uncorrelated => "uncorr",
        };
        format!("{tag}.s{}.{init}.l2-{}", self.seed, self.l2)
    }
}

pub fn run(args: &TrainArgs, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    if !(0.0..1.0).contains(&args.momentum) {
        return Err(CliError::Usage(format!("invalid value for --momentum: {} outside [0, 1)", args.momentum)));
    }
    let inits = if args.compare_init {
        vec![InitArg::Correlated, InitArg::Uncorrelated]
    } else {
        vec![args.init]
    };
    let l2s = args.l2_sweep.clone().unwrap_or_else(|| vec![args.l2]);
    let mut jobs = Vec::new();
    for seed in args.seed_offset..args.seed_offset + args.seeds {
        for &init in &inits {
            for &l2 in &l2s {
                jobs.push(Job { seed, init, l2 });
            }
        }
    }
    let template = args.spec.template();
    let results: Vec<CliResult<TrainReport>> = jobs
        .par_iter()
        .map(|job| {
            let teacher = ToyNetConfig {
                in_channels: args.channels,
                widths: args.teacher_widths.clone().unwrap_or_else(|| args.widths.clone()),
                outputs: args.outputs,
                init: InitMode::Correlated(template),
                seed: 1000 + job.seed,
                ..ToyNetConfig::default()
            };
            let data = DatasetSpec {
                n: args.n_train,
                channels: args.channels,
                height: args.size,
                width: args.size,
                smooth_len: args.smooth,
                seed: job.seed,
            };
            let (train_set, eval_set) = make_teacher_task(&data, args.n_eval, &teacher)?;
            let student = ToyNetConfig {
                init: match job.init {
                    InitArg::Correlated => InitMode::Correlated(template),
                    InitArg::Uncorrelated => InitMode::Uncorrelated,
                },
                seed: job.seed,
                ..ToyNetConfig {
                    widths: args.widths.clone(),
                    ..teacher.clone()
                }
            };
            let config = TrainConfig {
                epochs: args.epochs,
                batch_size: args.batch as usize,
                lr: args.lr,
                lr_decay: args.lr_decay,
                decay_epochs: args.decay_epochs.clone(),
                l2_lambda: job.l2,
                momentum: args.momentum,
                loss: match args.loss {
                    LossArg::Quadratic => Loss::Quadratic,
                    LossArg::CrossEntropy => Loss::CrossEntropy,
                },
                seed: job.seed,
                record_profiles: true,
            };
            Ok(train(&student, &train_set, &eval_set, &config)?)
        })
        .collect();
    let mut summary = format!(
        "{CSV_SCHEMA_LINE}\nseed,init,l2,status,epochs_completed,epoch5_train_loss,final_train_loss,final_eval_loss,final_d1_correlation\n"
    );
    for (job, result) in jobs.iter().zip(results) {
        let report = result?;
        let stem = job.stem(&args.tag);
        outputs.write(format!("{stem}.report.json"), (report.to_json_string()? + "\n").as_bytes())?;
        let mut csv = Vec::new();
        report.write_loss_csv(&mut csv)?;
        outputs.write(format!("{stem}.loss.csv"), &csv)?;
        for (l, w) in report.final_weights.iter().enumerate() {
            outputs.write(format!("{stem}.layer{l}.json"), w.to_json_string()?.as_bytes())?;
        }
        let status = match report.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { epoch } => format!("diverged@{epoch}"),
        };
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            job.seed,
            match job.init {
                InitArg::Correlated => "correlated",
                InitArg::Uncorrelated => "uncorrelated",
            },
            job.l2,
            status,
            report.epochs_completed(),
            cell(report.train_loss.get(4).copied()),
            cell(report.train_loss.last().copied()),
            cell(report.eval_loss.last().copied()),
            cell(report.final_mean_correlation(1.0)),
        ));
        println!(
            "{stem}: {status}, final train loss {}, eval loss {}",
            cell(report.train_loss.last().copied()),
            cell(report.eval_loss.last().copied())
        );
    }
    outputs.write(format!("{}.summary.csv", args.tag), summary.as_bytes())?;
    Ok(serde_json::to_value(args)?)
}
