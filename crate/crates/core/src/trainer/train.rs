//! SGD with momentum, decoupled L2 shrinkage and per-epoch weight analysis.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{argmax, SyntheticDataset};
use super::net::{Gradients, InitMode, Loss, ToyNet, ToyNetConfig};
use crate::correlation::{distance_profile, CorrelationProfile};
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, stream_rng, uniform_index};
use crate::tensor::LayerTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Factor applied to the rate at each epoch listed in `decay_epochs`.
    pub lr_decay: f64,
    /// 1-based epochs from which the next decay factor applies.
    pub decay_epochs: Vec<usize>,
    pub l2_lambda: f64,
    pub momentum: f64,
    pub loss: Loss,
    /// Seed of the per-epoch shuffle.
    pub seed: u64,
    pub record_profiles: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 0.01,
            lr_decay: 0.1,
            decay_epochs: Vec::new(),
            l2_lambda: 0.0,
            momentum: 0.9,
            loss: Loss::Quadratic,
            seed: 0,
            record_profiles: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr", format!("must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0) || !self.lr_decay.is_finite() {
            return Err(invalid("lr_decay", format!("must be > 0, got {}", self.lr_decay)));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(invalid("l2_lambda", format!("must be >= 0, got {}", self.l2_lambda)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        if self.decay_epochs.contains(&0) {
            return Err(invalid("decay_epochs", "epochs are 1-based"));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }
}

/// Momentum buffers.
///
/// One step: `v = momentum * v + g`, then `w -= lr * v + lr * l2 * w` with
/// the shrinkage term applied to conv weights only and computed from the
/// weight before the step.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    velocity: Gradients,
}

impl Optimizer {
    pub fn new(net: &ToyNet) -> Self {
        Self {
            velocity: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut ToyNet, grads: &Gradients, lr: f64, l2_lambda: f64, momentum: f64) {
        let conv_groups = net.conv_weight_groups();
        let params = net.param_slices_mut();
        let vels = self.velocity.slices_mut();
        for (group, ((p, v), g)) in params.into_iter().zip(vels).zip(grads.slices()).enumerate() {
            let shrink = if group < conv_groups { lr * l2_lambda } else { 0.0 };
            for ((w, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *v = momentum * *v + g;
                *w -= lr * *v + shrink * *w;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The loss became non-finite during this 1-based epoch.
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub net: ToyNetConfig,
    pub train: TrainConfig,
    pub status: RunStatus,
    /// Mean training loss before the first update.
    pub initial_train_loss: f64,
    /// Mean training loss over the full set after each epoch.
    pub train_loss: Vec<f64>,
    pub eval_loss: Vec<f64>,
    /// Argmax accuracy; defined for nets with at least two outputs.
    pub eval_accuracy: Vec<Option<f64>>,
    pub learning_rate: Vec<f64>,
    /// Distance profile of each conv layer at initialization.
    pub initial_profiles: Vec<Option<CorrelationProfile>>,
    /// `profiles[epoch][layer]`; `None` where a layer has fewer than two kernels
    /// or profiles are disabled.
    pub profiles: Vec<Vec<Option<CorrelationProfile>>>,
    #[serde(skip)]
    pub final_weights: Vec<LayerTensor>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn epochs_completed(&self) -> usize {
        self.train_loss.len()
    }

    /// Mean Pearson coefficient at distance `d` averaged over conv layers in
    /// the last recorded epoch (or at initialization when no epoch ran).
    pub fn final_mean_correlation(&self, d: f64) -> Option<f64> {
        let layers = self.profiles.last().unwrap_or(&self.initial_profiles);
        let values: Vec<f64> = layers
            .iter()
            .flatten()
            .filter_map(|p| p.mean_at(d))
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `epoch,train_loss,eval_loss,eval_acc`; undefined accuracy is empty.
    pub fn write_loss_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{}", crate::CSV_SCHEMA_LINE)?;
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["epoch", "train_loss", "eval_loss", "eval_acc"])?;
        for e in 0..self.train_loss.len() {
            csv.write_record([
                (e + 1).to_string(),
                self.train_loss[e].to_string(),
                self.eval_loss[e].to_string(),
                self.eval_accuracy[e].map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Builds a network from `net_config` and trains it.
pub fn train(
    net_config: &ToyNetConfig,
    train_set: &SyntheticDataset,
    eval_set: &SyntheticDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let mut net = ToyNet::new(net_config)?;
    train_net(&mut net, train_set, eval_set, config)
}

/// Trains `net` in place.
///
/// Each epoch visits the training set in a Fisher-Yates order drawn from
/// `stream_rng(derive_seed(seed, 2), epoch)`. A batch gradient is the mean
/// of per-sample gradients accumulated in visiting order, so runs are
/// bit-reproducible. Training stops early with [`RunStatus::Diverged`] when a
/// loss becomes non-finite; the series then hold the completed epochs only.
pub fn train_net(
    net: &mut ToyNet,
    train_set: &SyntheticDataset,
    eval_set: &SyntheticDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    let mut report = TrainReport {
        net: net.config.clone(),
        train: config.clone(),
        status: RunStatus::Completed,
        initial_train_loss: mean_loss(net, train_set, config.loss)?.0,
        train_loss: Vec::new(),
        eval_loss: Vec::new(),
        eval_accuracy: Vec::new(),
        learning_rate: Vec::new(),
        initial_profiles: layer_profiles(net, config.record_profiles)?,
        profiles: Vec::new(),
        final_weights: Vec::new(),
        wall_clock_secs: 0.0,
    };
    let mut optimizer = Optimizer::new(net);
    let shuffle_seed = derive_seed(config.seed, 2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        shuffle(&mut order, shuffle_seed, epoch as u64);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(net);
            for &i in batch {
                let (loss, g) = net.loss_and_gradients(
                    &train_set.inputs[i],
                    &train_set.targets[i],
                    train_set.labels[i],
                    config.loss,
                )?;
                if !loss.is_finite() {
                    report.status = RunStatus::Diverged { epoch };
                    break 'epochs;
                }
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            optimizer.step(net, &grads, lr, config.l2_lambda, config.momentum);
        }
        let train_loss = mean_loss(net, train_set, config.loss)?.0;
        let (eval_loss, eval_acc) = mean_loss(net, eval_set, config.loss)?;
        if !train_loss.is_finite() || !eval_loss.is_finite() {
            report.status = RunStatus::Diverged { epoch };
            break;
        }
        report.train_loss.push(train_loss);
        report.eval_loss.push(eval_loss);
        report.eval_accuracy.push(eval_acc);
        report.learning_rate.push(lr);
        report.profiles.push(layer_profiles(net, config.record_profiles)?);
    }
    report.final_weights = net.convs.iter().map(|c| c.weights.clone()).collect();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn shuffle(order: &mut [usize], seed: u64, epoch: u64) {
    let mut rng = stream_rng(seed, epoch);
    for i in (1..order.len()).rev() {
        let j = uniform_index(&mut rng, i + 1);
        order.swap(i, j);
    }
}

/// Mean loss over a dataset and, for multi-output nets, argmax accuracy.
fn mean_loss(net: &ToyNet, data: &SyntheticDataset, loss: Loss) -> Result<(f64, Option<f64>)> {
    let mut total = 0.0;
    let mut correct = 0usize;
    for ((x, t), &label) in data.inputs.iter().zip(&data.targets).zip(&data.labels) {
        let p = net.predict(x)?;
        total += loss.evaluate(&p, t, label).0;
        if argmax(&p) == label {
            correct += 1;
        }
    }
    let n = data.len().max(1) as f64;
    let acc = (net.config.outputs >= 2).then(|| correct as f64 / n);
    Ok((total / n, acc))
}

fn layer_profiles(net: &ToyNet, enabled: bool) -> Result<Vec<Option<CorrelationProfile>>> {
    net.convs
        .iter()
        .map(|c| {
            if enabled && c.weights.n_kernels() >= 2 {
                distance_profile(&c.weights).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Reports of one network trained without and with L2 shrinkage.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Pair {
    pub control: TrainReport,
    pub regularized: TrainReport,
}

impl L2Pair {
    /// `(control, regularized)` final mean correlation at distance `d`.
    pub fn final_correlations(&self, d: f64) -> (Option<f64>, Option<f64>) {
        (
            self.control.final_mean_correlation(d),
            self.regularized.final_mean_correlation(d),
        )
    }
}

/// Trains the same uncorrelated network on the same data with
/// `l2_lambda = lambdas.0` and `lambdas.1`.
pub fn l2_correlation_experiment(
    net_config: &ToyNetConfig,
    train_set: &SyntheticDataset,
    eval_set: &SyntheticDataset,
    config: &TrainConfig,
    lambdas: (f64, f64),
) -> Result<L2Pair> {
    if net_config.init != InitMode::Uncorrelated {
        return Err(invalid("init", "the L2 experiment starts from uncorrelated weights"));
    }
    let run = |lambda: f64| {
        let cfg = TrainConfig {
            l2_lambda: lambda,
            ..config.clone()
        };
        train(net_config, train_set, eval_set, &cfg)
    };
    Ok(L2Pair {
        control: run(lambdas.0)?,
        regularized: run(lambdas.1)?,
    })
}
