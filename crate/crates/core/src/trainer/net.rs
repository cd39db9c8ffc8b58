//! Toy CNN: valid 3x3 convolutions with ReLU, global average pooling and a
//! linear head, with hand-written backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::init::{layer_init, uncorrelated_layer, InitSpec};
use crate::rng::{derive_seed, stream_rng, symmetric_uniform};
use crate::tensor::LayerTensor;

pub const MAX_CONV_LAYERS: usize = 4;

/// A `c x h x w` grid stored channel-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f64>,
}

impl Volume {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, 0.0)
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f64) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![value; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{c}x{h}x{w} volume needs {} values, got {}",
                c * h * w,
                data.len()
            )));
        }
        Ok(Self { c, h, w, data })
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.h + i) * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.h + i) * self.w + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitMode {
    /// Correlated initialization; `k`, `n_l` and `seed` of the template are
    /// replaced per layer.
    Correlated(InitSpec),
    Uncorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNetConfig {
    pub in_channels: usize,
    /// Output channels of each conv layer.
    pub widths: Vec<usize>,
    pub k: usize,
    pub outputs: usize,
    pub bias: bool,
    pub init: InitMode,
    /// Multiplier applied to every initialized conv weight.
    pub init_gain: f64,
    pub seed: u64,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            widths: vec![8, 8],
            k: 3,
            outputs: 1,
            bias: false,
            init: InitMode::Correlated(InitSpec::default()),
            init_gain: 1.0,
            seed: 0,
        }
    }
}

impl ToyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() > MAX_CONV_LAYERS {
            return Err(invalid(
                "widths",
                format!("need 1..={MAX_CONV_LAYERS} conv layers, got {}", self.widths.len()),
            ));
        }
        if self.widths.contains(&0) {
            return Err(invalid("widths", "all widths must be >= 1"));
        }
        if self.in_channels == 0 || self.outputs == 0 {
            return Err(invalid("in_channels/outputs", "must be >= 1"));
        }
        if self.k != 3 {
            return Err(invalid("k", format!("toy net uses k = 3, got {}", self.k)));
        }
        if !self.init_gain.is_finite() {
            return Err(invalid("init_gain", "must be finite"));
        }
        Ok(())
    }

    /// Spatial size after all conv layers, if positive.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let shrink = self.widths.len() * (self.k - 1);
        (h > shrink && w > shrink).then(|| (h - shrink, w - shrink))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `(out, in, k, k)`.
    pub weights: LayerTensor,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `outputs x features`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub config: ToyNetConfig,
    pub convs: Vec<ConvLayer>,
    pub head: Head,
}

/// Activations kept by [`ToyNet::forward`] for [`ToyNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each conv layer.
    inputs: Vec<Volume>,
    /// Pre-activations of each conv layer.
    pre: Vec<Volume>,
    pooled: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl ForwardCache {
    /// Pre-activations of conv layer `l`.
    pub fn pre_activation(&self, l: usize) -> &Volume {
        &self.pre[l]
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv_weights: Vec<Vec<f64>>,
    pub conv_bias: Vec<Vec<f64>>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &ToyNet) -> Self {
        Self {
            conv_weights: net.convs.iter().map(|c| vec![0.0; c.weights.len()]).collect(),
            conv_bias: net.convs.iter().map(|c| vec![0.0; c.bias.len()]).collect(),
            head_weights: vec![0.0; net.head.weights.len()],
            head_bias: vec![0.0; net.head.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.conv_weights.iter_mut().zip(&other.conv_weights) {
            add(a, b);
        }
        for (a, b) in self.conv_bias.iter_mut().zip(&other.conv_bias) {
            add(a, b);
        }
        add(&mut self.head_weights, &other.head_weights);
        add(&mut self.head_bias, &other.head_bias);
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.slices_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.conv_weights.iter_mut().map(|v| v.as_mut_slice()));
        out.extend(self.conv_bias.iter_mut().map(|v| v.as_mut_slice()));
        out.push(&mut self.head_weights);
        out.push(&mut self.head_bias);
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.conv_weights.iter().map(|v| v.as_slice()));
        out.extend(self.conv_bias.iter().map(|v| v.as_slice()));
        out.push(&self.head_weights);
        out.push(&self.head_bias);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `sum_m (y_hat_m - y_m)^2`.
    #[default]
    Quadratic,
    /// Softmax cross-entropy against the argmax label.
    CrossEntropy,
}

impl Loss {
    /// Loss value and its gradient with respect to the prediction.
    pub fn evaluate(self, prediction: &[f64], target: &[f64], label: usize) -> (f64, Vec<f64>) {
        match self {
            Loss::Quadratic => {
                let r: Vec<f64> = prediction.iter().zip(target).map(|(p, t)| p - t).collect();
                (r.iter().map(|e| e * e).sum(), r.iter().map(|e| 2.0 * e).collect())
            }
            Loss::CrossEntropy => {
                let max = prediction.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = prediction.iter().map(|p| (p - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let loss = z.ln() - (prediction[label] - max);
                let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
                grad[label] -= 1.0;
                (loss, grad)
            }
        }
    }
}

impl ToyNet {
    /// Builds and initializes a network.
    ///
    /// Conv layer `l` is initialized from `derive_seed(seed, 100 + l)` and then
    /// scaled by `init_gain`. The head is uniform in `+-1/sqrt(features)`
    /// from `derive_seed(seed, 200)`; biases start at zero.
    pub fn new(config: &ToyNetConfig) -> Result<Self> {
        config.validate()?;
        let k = config.k;
        let mut convs = Vec::with_capacity(config.widths.len());
        let mut in_c = config.in_channels;
        for (l, &out_c) in config.widths.iter().enumerate() {
            let seed = derive_seed(config.seed, 100 + l as u64);
            let mut weights = match &config.init {
                InitMode::Correlated(template) => {
                    let spec = InitSpec {
                        k,
                        n_l: out_c * in_c * k * k,
                        seed,
                        ..*template
                    };
                    layer_init(out_c, in_c, &spec)?
                }
                InitMode::Uncorrelated => uncorrelated_layer(out_c, in_c, k, seed)?,
            };
            if config.init_gain != 1.0 {
                weights.data_mut().iter_mut().for_each(|w| *w *= config.init_gain);
            }
            convs.push(ConvLayer {
                weights,
                bias: vec![0.0; out_c],
            });
            in_c = out_c;
        }
        let features = in_c;
        let bound = 1.0 / (features as f64).sqrt();
        let mut rng = stream_rng(derive_seed(config.seed, 200), 0);
        let head = Head {
            weights: (0..config.outputs * features)
                .map(|_| symmetric_uniform(&mut rng, bound))
                .collect(),
            bias: vec![0.0; config.outputs],
            features,
        };
        Ok(Self {
            config: config.clone(),
            convs,
            head,
        })
    }

    pub fn forward(&self, input: &Volume) -> Result<ForwardCache> {
        if input.c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "net expects {} input channels, got {}",
                self.config.in_channels, input.c
            )));
        }
        if self.config.output_size(input.h, input.w).is_none() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} input is too small for {} valid conv layers",
                input.h,
                input.w,
                self.convs.len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut x = input.clone();
        for layer in &self.convs {
            let z = conv_forward(layer, &x, self.config.bias);
            let mut a = z.clone();
            a.data.iter_mut().for_each(|v| *v = v.max(0.0));
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        let area = (x.h * x.w) as f64;
        let pooled: Vec<f64> = (0..x.c).map(|c| x.plane(c).iter().sum::<f64>() / area).collect();
        let prediction = (0..self.config.outputs)
            .map(|m| {
                let row = &self.head.weights[m * self.head.features..(m + 1) * self.head.features];
                let dot: f64 = row.iter().zip(&pooled).map(|(w, p)| w * p).sum();
                dot + if self.config.bias { self.head.bias[m] } else { 0.0 }
            })
            .collect();
        Ok(ForwardCache {
            inputs,
            pre,
            pooled,
            prediction,
        })
    }

    pub fn predict(&self, input: &Volume) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.prediction)
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// gradient `loss_grad` of the loss with respect to the prediction.
    ///
    /// Bias gradients are zero when the net has no biases.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &[f64]) -> Result<Gradients> {
        self.check_cache(cache)?;
        if loss_grad.len() != self.config.outputs {
            return Err(Error::ShapeMismatch(format!(
                "loss gradient has {} entries, net has {} outputs",
                loss_grad.len(),
                self.config.outputs
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let f = self.head.features;
        let mut d_pooled = vec![0.0; f];
        for (m, g) in loss_grad.iter().enumerate() {
            for o in 0..f {
                grads.head_weights[m * f + o] = g * cache.pooled[o];
                d_pooled[o] += self.head.weights[m * f + o] * g;
            }
            if self.config.bias {
                grads.head_bias[m] = *g;
            }
        }
        let last = cache.pre.last().expect("at least one conv layer");
        let area = (last.h * last.w) as f64;
        let mut d_act = Volume::zeros(last.c, last.h, last.w);
        for o in 0..f {
            d_act.plane_mut(o).iter_mut().for_each(|v| *v = d_pooled[o] / area);
        }
        for l in (0..self.convs.len()).rev() {
            let z = &cache.pre[l];
            let mut dz = d_act;
            dz.data.iter_mut().zip(&z.data).for_each(|(d, z)| {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            });
            let need_input_grad = l > 0;
            let d_in = conv_backward(
                &self.convs[l],
                &cache.inputs[l],
                &dz,
                &mut grads.conv_weights[l],
                need_input_grad,
            );
            if self.config.bias {
                for o in 0..dz.c {
                    grads.conv_bias[l][o] = dz.plane(o).iter().sum();
                }
            }
            d_act = d_in.unwrap_or_else(|| Volume::zeros(0, 0, 0));
        }
        Ok(grads)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.pre.len() == self.convs.len()
            && cache.inputs.len() == self.convs.len()
            && cache.pooled.len() == self.head.features
            && cache
                .pre
                .iter()
                .zip(&self.convs)
                .all(|(z, c)| z.c == c.weights.n_filters());
        if ok {
            Ok(())
        } else {
            Err(Error::CacheMismatch("layer count or widths differ".into()))
        }
    }

    /// Mutable views of all trainable parameters, in [`Gradients::slices`] order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut weights: Vec<&mut [f64]> = Vec::new();
        let mut biases: Vec<&mut [f64]> = Vec::new();
        for c in self.convs.iter_mut() {
            weights.push(c.weights.data_mut());
            biases.push(c.bias.as_mut_slice());
        }
        let mut out = weights;
        out.append(&mut biases);
        out.push(&mut self.head.weights);
        out.push(&mut self.head.bias);
        out
    }

    /// Number of parameter groups holding conv weights (the first groups).
    pub fn conv_weight_groups(&self) -> usize {
        self.convs.len()
    }

    pub fn conv_weight_norm(&self) -> f64 {
        self.convs
            .iter()
            .flat_map(|c| c.weights.data())
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    /// Loss and parameter gradients for one sample.
    pub fn loss_and_gradients(
        &self,
        input: &Volume,
        target: &[f64],
        label: usize,
        loss: Loss,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward(input)?;
        let (value, grad) = loss.evaluate(&cache.prediction, target, label);
        Ok((value, self.backward(&cache, &grad)?))
    }
}

fn conv_forward(layer: &ConvLayer, x: &Volume, bias: bool) -> Volume {
    let w = &layer.weights;
    let (out_c, in_c, k) = (w.n_filters(), w.in_channels(), w.k());
    let (oh, ow) = (x.h - k + 1, x.w - k + 1);
    let mut z = Volume::zeros(out_c, oh, ow);
    for o in 0..out_c {
        let zp = z.plane_mut(o);
        if bias {
            zp.iter_mut().for_each(|v| *v = layer.bias[o]);
        }
        for c in 0..in_c {
            let xp = x.plane(c);
            let kernel = w.kernel(o, c);
            for dx in 0..k {
                for dy in 0..k {
                    let wv = kernel[dx * k + dy];
                    for i in 0..oh {
                        let src = &xp[(i + dx) * x.w + dy..(i + dx) * x.w + dy + ow];
                        let dst = &mut zp[i * ow..(i + 1) * ow];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += wv * s);
                    }
                }
            }
        }
    }
    z
}

/// Accumulates weight gradients into `dw` and returns the input gradient
/// when requested.
fn conv_backward(
    layer: &ConvLayer,
    x: &Volume,
    dz: &Volume,
    dw: &mut [f64],
    input_grad: bool,
) -> Option<Volume> {
    let w = &layer.weights;
    let (out_c, in_c, k) = (w.n_filters(), w.in_channels(), w.k());
    let (oh, ow) = (dz.h, dz.w);
    let mut dx_vol = input_grad.then(|| Volume::zeros(x.c, x.h, x.w));
    for o in 0..out_c {
        let dzp = dz.plane(o);
        if dzp.iter().all(|v| *v == 0.0) {
            continue;
        }
        for c in 0..in_c {
            let xp = x.plane(c);
            let kernel = w.kernel(o, c);
            let base = (o * in_c + c) * k * k;
            for dx in 0..k {
                for dy in 0..k {
                    let mut acc = 0.0;
                    for i in 0..oh {
                        let src = &xp[(i + dx) * x.w + dy..(i + dx) * x.w + dy + ow];
                        let g = &dzp[i * ow..(i + 1) * ow];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dw[base + dx * k + dy] += acc;
                    if let Some(dv) = dx_vol.as_mut() {
                        let wv = kernel[dx * k + dy];
                        let xw = dv.w;
                        let dp = dv.plane_mut(c);
                        for i in 0..oh {
                            let dst = &mut dp[(i + dx) * xw + dy..(i + dx) * xw + dy + ow];
                            let g = &dzp[i * ow..(i + 1) * ow];
                            dst.iter_mut().zip(g).for_each(|(d, g)| *d += wv * g);
                        }
                    }
                }
            }
        }
    }
    dx_vol
}
