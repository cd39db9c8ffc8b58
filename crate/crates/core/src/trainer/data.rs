//! Spatially correlated synthetic inputs and teacher-generated targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{InitMode, ToyNet, ToyNetConfig, Volume};
use crate::correlation::pearson;
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, stream_rng, symmetric_uniform};

/// Minimum lag-1 autocorrelation accepted for generated datasets.
pub const MIN_LAG1_AUTOCORRELATION: f64 = 0.2;

/// Smooths white noise with a Gaussian of standard deviation `smooth_len`.
///
/// The noise is uniform with unit variance, drawn row-major per channel on a
/// grid padded by the kernel radius `ceil(2 * smooth_len)`, and filtered
/// with a separable Gaussian whose 2D weights have unit L2 norm, so every
/// output pixel keeps zero mean and unit variance. `smooth_len = 0` returns
/// the white noise itself.
pub fn generate_correlated_field<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    c: usize,
    smooth_len: f64,
    rng: &mut R,
) -> Result<Volume> {
    if !(smooth_len >= 0.0) || !smooth_len.is_finite() {
        return Err(invalid("smooth_len", format!("must be >= 0, got {smooth_len}")));
    }
    let radius = (2.0 * smooth_len).ceil() as usize;
    let kernel = gaussian_taps(smooth_len, radius);
    let (ph, pw) = (h + 2 * radius, w + 2 * radius);
    let unit = 3f64.sqrt();
    let mut out = Volume::zeros(c, h, w);
    let mut noise = vec![0.0; ph * pw];
    let mut rows = vec![0.0; ph * w];
    for ch in 0..c {
        noise.iter_mut().for_each(|v| *v = symmetric_uniform(rng, unit));
        // Horizontal pass: ph x pw -> ph x w.
        for i in 0..ph {
            for j in 0..w {
                rows[i * w + j] = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, g)| g * noise[i * pw + j + t])
                    .sum();
            }
        }
        // Vertical pass: ph x w -> h x w.
        for i in 0..h {
            for j in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, g)| g * rows[(i + t) * w + j])
                    .sum();
                out.set(ch, i, j, v);
            }
        }
    }
    Ok(out)
}

fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return vec![1.0];
    }
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|t| {
            let d = t as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.into_iter().map(|t| t / norm).collect()
}

/// Pearson correlation of horizontally and vertically adjacent pixels,
/// pooled over channels.
pub fn lag1_autocorrelation(volumes: &[Volume]) -> Result<f64> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for v in volumes {
        for ch in 0..v.c {
            for i in 0..v.h {
                for j in 0..v.w {
                    if j + 1 < v.w {
                        xs.push(v.get(ch, i, j));
                        ys.push(v.get(ch, i, j + 1));
                    }
                    if i + 1 < v.h {
                        xs.push(v.get(ch, i, j));
                        ys.push(v.get(ch, i + 1, j));
                    }
                }
            }
        }
    }
    pearson(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub smooth_len: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n: 256,
            channels: 1,
            height: 12,
            width: 12,
            smooth_len: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub inputs: Vec<Volume>,
    /// Teacher outputs, one vector per sample.
    pub targets: Vec<Vec<f64>>,
    /// Index of the largest teacher output, for classification.
    pub labels: Vec<usize>,
    pub lag1_autocorrelation: f64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Population variance of the first target component.
    pub fn target_variance(&self) -> f64 {
        let n = self.targets.len() as f64;
        let mean = self.targets.iter().map(|t| t[0]).sum::<f64>() / n;
        self.targets.iter().map(|t| (t[0] - mean).powi(2)).sum::<f64>() / n
    }
}

/// Generates inputs and labels them with a teacher network built from
/// `teacher`, which must use correlated initialization.
///
/// Input `i` is drawn from `stream_rng(derive_seed(spec.seed, 1), i)`.
pub fn make_teacher_dataset(spec: &DatasetSpec, teacher: &ToyNetConfig) -> Result<SyntheticDataset> {
    if !matches!(teacher.init, InitMode::Correlated(_)) {
        return Err(invalid("teacher", "teacher network must use correlated initialization"));
    }
    let net = ToyNet::new(teacher)?;
    make_dataset_with_net(spec, &net)
}

/// As [`make_teacher_dataset`] with an explicit teacher network.
pub fn make_dataset_with_net(spec: &DatasetSpec, teacher: &ToyNet) -> Result<SyntheticDataset> {
    if spec.n < 2 {
        return Err(invalid("n", format!("need at least 2 samples, got {}", spec.n)));
    }
    let input_seed = derive_seed(spec.seed, 1);
    let inputs = (0..spec.n)
        .map(|i| {
            let mut rng = stream_rng(input_seed, i as u64);
            generate_correlated_field(spec.height, spec.width, spec.channels, spec.smooth_len, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let lag1 = lag1_autocorrelation(&inputs)?;
    if lag1 <= MIN_LAG1_AUTOCORRELATION {
        return Err(invalid(
            "smooth_len",
            format!("lag-1 autocorrelation {lag1:.3} <= {MIN_LAG1_AUTOCORRELATION}"),
        ));
    }
    let mut targets = Vec::with_capacity(spec.n);
    for x in &inputs {
        targets.push(teacher.predict(x)?);
    }
    let labels = targets.iter().map(|t| argmax(t)).collect();
    Ok(SyntheticDataset {
        spec: *spec,
        inputs,
        targets,
        labels,
        lag1_autocorrelation: lag1,
    })
}

/// A training set and a held-out set from the same teacher.
///
/// The held-out inputs use dataset seed `derive_seed(spec.seed, 3)`. Every
/// target component of both sets is shifted and scaled by the training-set
/// mean and standard deviation, so the regression loss of a constant
/// predictor starts near 1 whatever the teacher's scale. Labels keep the
/// argmax of the raw teacher outputs.
pub fn make_teacher_task(
    spec: &DatasetSpec,
    eval_n: usize,
    teacher: &ToyNetConfig,
) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let mut train = make_teacher_dataset(spec, teacher)?;
    let eval_spec = DatasetSpec {
        n: eval_n,
        seed: derive_seed(spec.seed, 3),
        ..*spec
    };
    let mut eval = make_teacher_dataset(&eval_spec, teacher)?;
    let n = train.len() as f64;
    for m in 0..teacher.outputs {
        let mean = train.targets.iter().map(|t| t[m]).sum::<f64>() / n;
        let var = train.targets.iter().map(|t| (t[m] - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(invalid("teacher", format!("output {m} is constant over the training set")));
        }
        let sd = var.sqrt();
        for t in train.targets.iter_mut().chain(eval.targets.iter_mut()) {
            t[m] = (t[m] - mean) / sd;
        }
    }
    Ok((train, eval))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::InitSpec;

    #[test]
    fn white_noise_has_no_lag1_correlation() {
        let mut rng = stream_rng(1, 0);
        let v = generate_correlated_field(100, 100, 1, 0.0, &mut rng).unwrap();
        assert!(lag1_autocorrelation(&[v]).unwrap().abs() < 0.05);
    }

    #[test]
    fn smoothing_induces_correlation_and_keeps_zero_mean() {
        let fields: Vec<Volume> = (0..16)
            .map(|i| generate_correlated_field(64, 64, 1, 2.0, &mut stream_rng(2, i)).unwrap())
            .collect();
        assert!(lag1_autocorrelation(&fields[..1]).unwrap() > 0.5);
        // Averaged over 16 fields: one smoothed field has only ~80 independent pixels.
        let mean = fields.iter().flat_map(|v| v.data()).sum::<f64>() / (16.0 * 4096.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        let var = fields.iter().flat_map(|v| v.data()).map(|x| x * x).sum::<f64>() / (16.0 * 4096.0);
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn rejects_negative_smoothing() {
        assert!(generate_correlated_field(4, 4, 1, -1.0, &mut stream_rng(0, 0)).is_err());
    }

    fn teacher() -> ToyNetConfig {
        ToyNetConfig {
            widths: vec![4, 4],
            init: InitMode::Correlated(InitSpec::default()),
            init_gain: 4.0,
            seed: 5,
            ..ToyNetConfig::default()
        }
    }

    #[test]
    fn dataset_is_deterministic_and_non_degenerate() {
        let spec = DatasetSpec {
            n: 1000,
            ..DatasetSpec::default()
        };
        let a = make_teacher_dataset(&spec, &teacher()).unwrap();
        let b = make_teacher_dataset(&spec, &teacher()).unwrap();
        assert_eq!(a, b);
        assert!(a.target_variance() > 0.0);
        assert!(a.lag1_autocorrelation > MIN_LAG1_AUTOCORRELATION);
    }

    #[test]
    fn task_targets_are_standardized() {
        let spec = DatasetSpec {
            n: 200,
            ..DatasetSpec::default()
        };
        let (train, eval) = make_teacher_task(&spec, 50, &teacher()).unwrap();
        assert_eq!(eval.len(), 50);
        let mean = train.targets.iter().map(|t| t[0]).sum::<f64>() / 200.0;
        assert!(mean.abs() < 1e-12);
        assert!((train.target_variance() - 1.0).abs() < 1e-12);
        assert_ne!(train.inputs[0], eval.inputs[0]);
    }

    #[test]
    fn teacher_must_be_correlated() {
        let t = ToyNetConfig {
            init: InitMode::Uncorrelated,
            ..teacher()
        };
        assert!(make_teacher_dataset(&DatasetSpec::default(), &t).is_err());
    }

    #[test]
    fn white_noise_dataset_is_rejected() {
        let spec = DatasetSpec {
            smooth_len: 0.0,
            ..DatasetSpec::default()
        };
        assert!(make_teacher_dataset(&spec, &teacher()).is_err());
    }

    #[test]
    fn constant_input_through_identity_teacher() {
        // One 1x1-channel 3x3 conv with only the center tap set, head weight 1:
        // output = pooled ReLU(w_center * c) = w_center * c for c > 0.
        let cfg = ToyNetConfig {
            widths: vec![1],
            ..ToyNetConfig::default()
        };
        let mut net = ToyNet::new(&cfg).unwrap();
        let mut kernel = vec![0.0; 9];
        kernel[4] = 0.5;
        net.convs[0].weights.data_mut().copy_from_slice(&kernel);
        net.head.weights[0] = 2.0;
        let x = Volume::filled(1, 6, 6, 3.0);
        let y = net.predict(&x).unwrap();
        assert!((y[0] - 3.0 * 0.5 * 2.0).abs() < 1e-12);
    }
}
