//! Correlated and uncorrelated initialization of `k x k` spatial filters.
//!
//! A correlated kernel is built around a "representation center" `(x_l, y_l)`
//! drawn from a location set `L`. The center gets strength `s`, every other
//! position gets `s * g(d)` where `d` is the Euclidean index distance to the
//! center and `g` a tabulated decay profile. The result is blended with an
//! independent uniform noise matrix:
//!
//! ```text
//! kernel = (1 - alpha) * M_c + alpha * M_r,   M_c(x, y) = s * g(|(x, y) - (x_l, y_l)|)
//! ```
//!
//! Both `s` and the entries of `M_r` lie in `[-s_m, s_m]`.
//!
//! # Draw order
//!
//! For one kernel the generator is consumed as: one draw for the location
//! index, one draw for the strength, then `k*k` noise draws in row-major
//! order. The noise matrix is drawn even when `alpha == 0`. See [`crate::rng`]
//! for how each draw maps to an interval or index.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, symmetric_uniform, uniform_index};
use crate::tensor::LayerTensor;

const DISTANCE_TOLERANCE: f64 = 1e-9;

/// Distance-indexed decay factors `g(d)`; `g(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    pub a1: f64,
    pub a_sqrt2: f64,
    pub a2: f64,
    pub a_sqrt5: f64,
    pub a_sqrt8: f64,
    /// Factor for every distance not listed above.
    pub a_other: f64,
}

impl Default for DecayProfile {
    fn default() -> Self {
        Self {
            a1: 0.9,
            a_sqrt2: 0.7,
            a2: 0.5,
            a_sqrt5: 0.0,
            a_sqrt8: 0.0,
            a_other: 0.0,
        }
    }
}

impl DecayProfile {
    /// `g(d) = 0` for every `d > 0`.
    pub fn none() -> Self {
        Self::uniform(0.0)
    }

    /// The same factor at every positive distance.
    pub fn uniform(a: f64) -> Self {
        Self {
            a1: a,
            a_sqrt2: a,
            a2: a,
            a_sqrt5: a,
            a_sqrt8: a,
            a_other: a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a1", self.a1),
            ("a_sqrt2", self.a_sqrt2),
            ("a2", self.a2),
            ("a_sqrt5", self.a_sqrt5),
            ("a_sqrt8", self.a_sqrt8),
            ("a_other", self.a_other),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("decay factor {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn value(&self, d: f64) -> f64 {
        decay_value(self, d)
    }
}

/// Evaluates the decay profile at distance `d >= 0`.
pub fn decay_value(profile: &DecayProfile, d: f64) -> f64 {
    let table = [
        (0.0, 1.0),
        (1.0, profile.a1),
        (std::f64::consts::SQRT_2, profile.a_sqrt2),
        (2.0, profile.a2),
        (5f64.sqrt(), profile.a_sqrt5),
        (8f64.sqrt(), profile.a_sqrt8),
    ];
    table
        .iter()
        .find(|(at, _)| (d - at).abs() < DISTANCE_TOLERANCE)
        .map_or(profile.a_other, |&(_, a)| a)
}

/// Which positions may serve as the representation center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationStrategy {
    /// Every position of the grid.
    All,
    /// The geometric center `(k/2, k/2)`.
    Center,
    /// The four axis-adjacent positions of the center.
    Neighbor,
}

impl LocationStrategy {
    /// Resolves the location set `L` for side length `k`, as `(row, column)`
    /// pairs in row-major order.
    pub fn locations(self, k: usize) -> Result<Vec<(usize, usize)>> {
        let c = k / 2;
        let locations: Vec<(usize, usize)> = match self {
            LocationStrategy::All => (0..k).flat_map(|x| (0..k).map(move |y| (x, y))).collect(),
            LocationStrategy::Center if k > 0 => vec![(c, c)],
            LocationStrategy::Center => Vec::new(),
            LocationStrategy::Neighbor => {
                let mut v = Vec::with_capacity(4);
                if c >= 1 {
                    v.push((c - 1, c));
                    v.push((c, c - 1));
                }
                if c + 1 < k {
                    v.push((c, c + 1));
                    v.push((c + 1, c));
                }
                v.sort_unstable();
                v
            }
        };
        if locations.is_empty() {
            return Err(Error::EmptyLocations { k });
        }
        Ok(locations)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            LocationStrategy::All => "all",
            LocationStrategy::Center => "cen",
            LocationStrategy::Neighbor => "nei",
        }
    }
}

impl fmt::Display for LocationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for LocationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LocationStrategy::All),
            "cen" | "center" => Ok(LocationStrategy::Center),
            "nei" | "neighbor" => Ok(LocationStrategy::Neighbor),
            other => Err(invalid("strategy", format!("`{other}` is not one of all, cen, nei"))),
        }
    }
}

/// How the strength bound `s_m` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `s_m = 1 / sqrt(n_l)`.
    #[default]
    AsWritten,
    /// `s_m = scaling_constant(k, n_l, layer_variance_factor(spec))`.
    VarianceCorrected,
}

/// Distribution of the center strength `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthDraw {
    /// Uniform on `[-s_m, s_m]`.
    #[default]
    Uniform,
    /// `-s_m` or `+s_m` with equal probability.
    TwoPoint,
}

/// Full recipe for one layer's correlated initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub k: usize,
    /// Number of weights in the layer.
    pub n_l: usize,
    pub strategy: LocationStrategy,
    pub decay: DecayProfile,
    /// Weight of the uncorrelated noise matrix.
    pub alpha: f64,
    pub scaling: Scaling,
    pub strength: StrengthDraw,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            k: 3,
            n_l: 9,
            strategy: LocationStrategy::Neighbor,
            decay: DecayProfile::default(),
            alpha: 0.05,
            scaling: Scaling::AsWritten,
            strength: StrengthDraw::Uniform,
            seed: 0,
        }
    }
}

impl InitSpec {
    /// A spec for a layer of `n_filters x in_channels` kernels of side `k`.
    pub fn for_layer(k: usize, n_filters: usize, in_channels: usize) -> Self {
        Self {
            k,
            n_l: n_filters * in_channels * k * k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(invalid("k", format!("filter size must be odd and positive, got {}", self.k)));
        }
        if self.n_l < self.k * self.k {
            return Err(invalid("n_l", format!("{} is smaller than k^2 = {}", self.n_l, self.k * self.k)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        self.decay.validate()
    }

    /// The strength bound `s_m` this spec draws from.
    pub fn strength_bound(&self) -> Result<f64> {
        self.validate()?;
        match self.scaling {
            Scaling::AsWritten => Ok(1.0 / (self.n_l as f64).sqrt()),
            Scaling::VarianceCorrected => {
                scaling_constant(self.k, self.n_l, layer_variance_factor(self)?)
            }
        }
    }
}

/// A single `k x k` filter, stored row-major (`values[x * k + y]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterKernel {
    k: usize,
    values: Vec<f64>,
}

impl FilterKernel {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "{k}x{k} kernel needs {} values, got {}",
                k * k,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("kernel values must be finite".into()));
        }
        Ok(Self { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.k + y]
    }

    /// Rows as nested vectors, handy for printing and comparisons.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    /// Row and column of the entry with the largest magnitude (first on ties).
    pub fn argmax_abs(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if v.abs() > self.values[best].abs() {
                best = i;
            }
        }
        (best / self.k, best % self.k)
    }
}

/// A correlated kernel together with the draws that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedDraw {
    pub kernel: FilterKernel,
    pub center: (usize, usize),
    pub strength: f64,
    pub strength_bound: f64,
}

fn index_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    (dx * dx + dy * dy).sqrt()
}

/// The decay template `g(|(x, y) - center|)` on a `k x k` grid.
pub fn correlated_template(k: usize, center: (usize, usize), decay: &DecayProfile) -> Vec<f64> {
    (0..k)
        .flat_map(|x| (0..k).map(move |y| (x, y)))
        .map(|p| decay_value(decay, index_distance(p, center)))
        .collect()
}

/// Draws one correlated kernel and reports the center and strength used.
pub fn single_filter_corr_init_detailed<R: Rng + ?Sized>(
    spec: &InitSpec,
    rng: &mut R,
) -> Result<CorrelatedDraw> {
    let bound = spec.strength_bound()?;
    let locations = spec.strategy.locations(spec.k)?;
    let center = locations[uniform_index(rng, locations.len())];
    let strength = match spec.strength {
        StrengthDraw::Uniform => symmetric_uniform(rng, bound),
        StrengthDraw::TwoPoint => {
            if rng.random::<f64>() < 0.5 {
                -bound
            } else {
                bound
            }
        }
    };
    let template = correlated_template(spec.k, center, &spec.decay);
    let values = template
        .iter()
        .map(|g| {
            let noise = symmetric_uniform(rng, bound);
            (1.0 - spec.alpha) * strength * g + spec.alpha * noise
        })
        .collect();
    Ok(CorrelatedDraw {
        kernel: FilterKernel::new(spec.k, values)?,
        center,
        strength,
        strength_bound: bound,
    })
}

/// Draws one correlated `k x k` kernel.
pub fn single_filter_corr_init<R: Rng + ?Sized>(spec: &InitSpec, rng: &mut R) -> Result<FilterKernel> {
    single_filter_corr_init_detailed(spec, rng).map(|d| d.kernel)
}

/// Draws a kernel with independent entries uniform on `[-1/sqrt(n_l), 1/sqrt(n_l)]`.
pub fn uncorrelated_init<R: Rng + ?Sized>(k: usize, n_l: usize, rng: &mut R) -> Result<FilterKernel> {
    if k == 0 {
        return Err(invalid("k", "filter size must be positive"));
    }
    if n_l < k * k {
        return Err(invalid("n_l", format!("{n_l} is smaller than k^2 = {}", k * k)));
    }
    let bound = 1.0 / (n_l as f64).sqrt();
    let values = (0..k * k).map(|_| symmetric_uniform(rng, bound)).collect();
    FilterKernel::new(k, values)
}

/// Builds a layer by calling `draw` once per kernel slot with that slot's
/// generator, `stream_rng(seed, filter * in_channels + channel)`.
fn build_layer<F>(n_filters: usize, in_channels: usize, k: usize, seed: u64, draw: F) -> Result<LayerTensor>
where
    F: Fn(&mut crate::rng::StreamRng) -> Result<FilterKernel>,
{
    let slots = n_filters * in_channels;
    let mut data = Vec::with_capacity(slots * k * k);
    for slot in 0..slots {
        let mut rng = stream_rng(seed, slot as u64);
        data.extend_from_slice(draw(&mut rng)?.values());
    }
    LayerTensor::new([n_filters, in_channels, k, k], data)
}

/// Correlated initialization of a whole layer.
///
/// Kernel `(f, c)` is drawn from `stream_rng(spec.seed, f * in_channels + c)`,
/// so `layer_init(1, 1, spec)` equals
/// `single_filter_corr_init(spec, &mut stream_rng(spec.seed, 0))`.
pub fn layer_init(n_filters: usize, in_channels: usize, spec: &InitSpec) -> Result<LayerTensor> {
    spec.validate()?;
    let expected = n_filters * in_channels * spec.k * spec.k;
    if spec.n_l != expected {
        return Err(Error::ShapeMismatch(format!(
            "n_l = {} but {n_filters} filters x {in_channels} channels x {}^2 = {expected}",
            spec.n_l, spec.k
        )));
    }
    let tensor = build_layer(n_filters, in_channels, spec.k, spec.seed, |rng| {
        single_filter_corr_init(spec, rng)
    })?;
    Ok(tensor.with_provenance(Some(spec.seed), serde_json::to_value(spec).ok()))
}

/// Uncorrelated initialization of a whole layer with the same per-slot streams
/// as [`layer_init`].
pub fn uncorrelated_layer(n_filters: usize, in_channels: usize, k: usize, seed: u64) -> Result<LayerTensor> {
    let n_l = n_filters * in_channels * k * k;
    let tensor = build_layer(n_filters, in_channels, k, seed, |rng| uncorrelated_init(k, n_l, rng))?;
    Ok(tensor.with_provenance(
        Some(seed),
        Some(serde_json::json!({ "mode": "uncorrelated", "k": k, "n_l": n_l })),
    ))
}

/// `Var(sum of kernel) / Var(center)` for a kernel centered at the grid
/// center with `alpha = 0`, computed as the double sum of
/// `g(d_p) * g(d_q)` over all position pairs.
pub fn center_variance_factor(profile: &DecayProfile, k: usize) -> f64 {
    let c = k / 2;
    let template = correlated_template(k, (c, c), profile);
    covariance_double_sum(&template)
}

fn covariance_double_sum(template: &[f64]) -> f64 {
    template
        .iter()
        .map(|gp| template.iter().map(|gq| gp * gq).sum::<f64>())
        .sum()
}

/// Generalisation of [`center_variance_factor`] to any strategy and `alpha`.
///
/// Locations are equiprobable, so the correlated part contributes the mean
/// of the per-location double sums, scaled by `(1 - alpha)^2`. The noise
/// matrix adds `alpha^2 * k^2` (independent entries with the same variance as
/// the strength).
pub fn layer_variance_factor(spec: &InitSpec) -> Result<f64> {
    let locations = spec.strategy.locations(spec.k)?;
    let correlated = locations
        .iter()
        .map(|&l| covariance_double_sum(&correlated_template(spec.k, l, &spec.decay)))
        .sum::<f64>()
        / locations.len() as f64;
    let keep = 1.0 - spec.alpha;
    Ok(keep * keep * correlated + spec.alpha * spec.alpha * (spec.k * spec.k) as f64)
}

/// `s_m = k / sqrt(n_l * var_w)`.
pub fn scaling_constant(k: usize, n_l: usize, var_w: f64) -> Result<f64> {
    if !(var_w > 0.0) || !var_w.is_finite() {
        return Err(invalid("var_w", format!("must be positive and finite, got {var_w}")));
    }
    if n_l == 0 {
        return Err(invalid("n_l", "must be positive"));
    }
    Ok(k as f64 / (n_l as f64 * var_w).sqrt())
}

/// Unbiased sample variance of all elements of the tensor.
pub fn empirical_layer_variance(t: &LayerTensor) -> Result<f64> {
    sample_variance(t.data())
}

pub(crate) fn sample_variance(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewElements { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn spec(strategy: LocationStrategy, alpha: f64) -> InitSpec {
        InitSpec {
            strategy,
            alpha,
            ..InitSpec::for_layer(3, 8, 4)
        }
    }

    #[test]
    fn decay_defaults() {
        let p = DecayProfile::default();
        assert_eq!(decay_value(&p, 0.0), 1.0);
        assert_eq!(decay_value(&p, 1.0), 0.9);
        assert_eq!(decay_value(&p, 2f64.sqrt()), 0.7);
        assert_eq!(decay_value(&p, 2.0), 0.5);
        assert_eq!(decay_value(&p, 2.5), 0.0);
        assert_eq!(decay_value(&p, 8f64.sqrt() + 5e-10), 0.0);
    }

    #[test]
    fn decay_profile_validation() {
        assert!(DecayProfile::default().validate().is_ok());
        let bad = DecayProfile {
            a1: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn location_sets() {
        assert_eq!(LocationStrategy::Center.locations(3).unwrap(), vec![(1, 1)]);
        assert_eq!(
            LocationStrategy::Neighbor.locations(3).unwrap(),
            vec![(0, 1), (1, 0), (1, 2), (2, 1)]
        );
        assert_eq!(LocationStrategy::All.locations(3).unwrap().len(), 9);
        assert_eq!(LocationStrategy::Center.locations(5).unwrap(), vec![(2, 2)]);
        assert_eq!(
            LocationStrategy::Neighbor.locations(5).unwrap(),
            vec![(1, 2), (2, 1), (2, 3), (3, 2)]
        );
        assert!(matches!(
            LocationStrategy::Neighbor.locations(1),
            Err(Error::EmptyLocations { k: 1 })
        ));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("cen".parse::<LocationStrategy>().unwrap(), LocationStrategy::Center);
        assert_eq!("nei".parse::<LocationStrategy>().unwrap(), LocationStrategy::Neighbor);
        assert!("diag".parse::<LocationStrategy>().is_err());
    }

    #[test]
    fn center_template_matches_hand_evaluation() {
        let s = InitSpec {
            alpha: 0.0,
            ..spec(LocationStrategy::Center, 0.0)
        };
        let draw = single_filter_corr_init_detailed(&s, &mut stream_rng(3, 0)).unwrap();
        let expected = [[0.7, 0.9, 0.7], [0.9, 1.0, 0.9], [0.7, 0.9, 0.7]];
        for x in 0..3 {
            for y in 0..3 {
                let normalised = draw.kernel.get(x, y) / draw.strength;
                assert!((normalised - expected[x][y]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_even_k_and_empty_locations() {
        let even = InitSpec {
            k: 4,
            n_l: 16,
            ..InitSpec::default()
        };
        assert!(single_filter_corr_init(&even, &mut stream_rng(0, 0)).is_err());
        let k1 = InitSpec {
            k: 1,
            n_l: 1,
            strategy: LocationStrategy::Neighbor,
            ..InitSpec::default()
        };
        assert!(matches!(
            single_filter_corr_init(&k1, &mut stream_rng(0, 0)),
            Err(Error::EmptyLocations { .. })
        ));
        let alpha = InitSpec {
            alpha: 1.5,
            ..InitSpec::default()
        };
        assert!(alpha.validate().is_err());
    }

    #[test]
    fn k1_is_single_uniform_value() {
        for strategy in [LocationStrategy::All, LocationStrategy::Center] {
            let s = InitSpec {
                k: 1,
                n_l: 4,
                strategy,
                alpha: 0.3,
                ..InitSpec::default()
            };
            let mut rng = stream_rng(11, 0);
            let mut sum = 0.0;
            let n = 20_000;
            for _ in 0..n {
                let v = single_filter_corr_init(&s, &mut rng).unwrap().values()[0];
                assert!(v.abs() <= 0.5);
                sum += v;
            }
            assert!((sum / n as f64).abs() < 0.01);
        }
    }

    #[test]
    fn alpha_one_matches_uncorrelated_distribution() {
        let s = InitSpec {
            alpha: 1.0,
            strategy: LocationStrategy::All,
            ..InitSpec::for_layer(3, 1, 1)
        };
        let n = 20_000;
        let mut rng = stream_rng(5, 0);
        let mut corr: Vec<f64> = (0..n)
            .flat_map(|_| single_filter_corr_init(&s, &mut rng).unwrap().into_values())
            .collect();
        let mut rng = stream_rng(6, 0);
        let mut unc: Vec<f64> = (0..n)
            .flat_map(|_| uncorrelated_init(3, 9, &mut rng).unwrap().into_values())
            .collect();
        corr.sort_by(f64::total_cmp);
        unc.sort_by(f64::total_cmp);
        // Two-sample Kolmogorov-Smirnov statistic over equal-size samples.
        let m = corr.len();
        let (mut i, mut j, mut ks) = (0, 0, 0.0f64);
        while i < m && j < m {
            if corr[i] <= unc[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 - j as f64).abs() / m as f64);
        }
        let critical = 1.95 * (2.0 / m as f64).sqrt(); // alpha = 0.001
        assert!(ks < critical, "KS statistic {ks} >= {critical}");
    }

    #[test]
    fn uncorrelated_moments() {
        let mut rng = stream_rng(1, 0);
        let values: Vec<f64> = (0..100_000 / 9 + 1)
            .flat_map(|_| uncorrelated_init(3, 9, &mut rng).unwrap().into_values())
            .collect();
        assert!(values.iter().all(|v| v.abs() <= 1.0 / 3.0));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.01);
        let var = sample_variance(&values).unwrap();
        let expected = (1.0f64 / 3.0).powi(2) / 3.0;
        assert!((var - expected).abs() / expected < 0.05);

        let single = uncorrelated_init(1, 1, &mut rng).unwrap();
        assert!(single.values()[0].abs() <= 1.0);
    }

    #[test]
    fn layer_init_shapes_and_singleton() {
        let s = spec(LocationStrategy::Neighbor, 0.05);
        let t = layer_init(8, 4, &s).unwrap();
        assert_eq!(t.len(), 8 * 4 * 9);
        let small = InitSpec::for_layer(3, 4, 2);
        assert_eq!(layer_init(4, 2, &small).unwrap().len(), 72);

        let one = InitSpec::for_layer(3, 1, 1);
        let t = layer_init(1, 1, &one).unwrap();
        let k = single_filter_corr_init(&one, &mut stream_rng(one.seed, 0)).unwrap();
        assert_eq!(t.data(), k.values());
        assert!(matches!(layer_init(2, 2, &one), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn center_variance_factor_values() {
        let p = DecayProfile::default();
        assert!((center_variance_factor(&p, 3) - 54.76).abs() < 1e-12);
        assert_eq!(center_variance_factor(&DecayProfile::none(), 3), 1.0);
        assert_eq!(center_variance_factor(&DecayProfile::uniform(1.0), 3), 81.0);
    }

    #[test]
    fn center_variance_factor_matches_closed_form() {
        for (g1, g2) in [(0.9, 0.7), (0.3, 0.1), (1.0, 0.0), (0.55, 0.8)] {
            let p = DecayProfile {
                a1: g1,
                a_sqrt2: g2,
                ..Default::default()
            };
            let closed = 1.0 + 8.0 * g1 + 8.0 * g2 + 16.0 * g1 * g1 + 32.0 * g1 * g2 + 16.0 * g2 * g2;
            assert!((center_variance_factor(&p, 3) - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_variance_factor_reduces_to_center_case() {
        let s = InitSpec {
            strategy: LocationStrategy::Center,
            alpha: 0.0,
            ..InitSpec::default()
        };
        assert_eq!(layer_variance_factor(&s).unwrap(), center_variance_factor(&s.decay, 3));
        let noise_only = InitSpec { alpha: 1.0, ..s };
        assert_eq!(layer_variance_factor(&noise_only).unwrap(), 9.0);
    }

    #[test]
    fn scaling_constant_values() {
        let s = scaling_constant(3, 9, 54.76).unwrap();
        assert!((s - 3.0 / (9.0f64 * 54.76).sqrt()).abs() < 1e-15);
        assert!((s - 1.0 / 7.4).abs() < 1e-15);
        assert_eq!(scaling_constant(1, 1, 1.0).unwrap(), 1.0);
        for k in [1, 3, 5, 7] {
            assert_eq!(scaling_constant(k, k * k, 1.0).unwrap(), 1.0);
        }
        assert!(scaling_constant(3, 9, 0.0).is_err());
        assert!(scaling_constant(3, 9, -1.0).is_err());
    }

    #[test]
    fn empirical_variance_values() {
        let constant = LayerTensor::new([1, 1, 3, 3], vec![0.25; 9]).unwrap();
        assert_eq!(empirical_layer_variance(&constant).unwrap(), 0.0);
        let two = LayerTensor::new([2, 1, 1, 1], vec![-1.0, 1.0]).unwrap();
        assert_eq!(empirical_layer_variance(&two).unwrap(), 2.0);
        let four = LayerTensor::new([4, 1, 1, 1], vec![0.0, 0.0, 3.0, 3.0]).unwrap();
        assert_eq!(empirical_layer_variance(&four).unwrap(), 3.0);
        let one = LayerTensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
        assert!(matches!(
            empirical_layer_variance(&one),
            Err(Error::TooFewElements { .. })
        ));
    }

    fn any_strategy() -> impl Strategy<Value = LocationStrategy> {
        prop_oneof![
            Just(LocationStrategy::All),
            Just(LocationStrategy::Center),
            Just(LocationStrategy::Neighbor)
        ]
    }

    fn any_spec() -> impl Strategy<Value = InitSpec> {
        (
            prop_oneof![Just(3usize), Just(5), Just(7)],
            any_strategy(),
            0.0..=1.0f64,
            (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64),
            any::<bool>(),
            any::<u64>(),
        )
            .prop_map(|(k, strategy, alpha, (a1, a2, a3), corrected, seed)| InitSpec {
                k,
                n_l: 16 * k * k,
                strategy,
                decay: DecayProfile {
                    a1,
                    a_sqrt2: a2,
                    a2: a3,
                    ..Default::default()
                },
                alpha,
                scaling: if corrected {
                    Scaling::VarianceCorrected
                } else {
                    Scaling::AsWritten
                },
                strength: StrengthDraw::Uniform,
                seed,
            })
    }

    proptest! {
        #[test]
        fn deterministic_given_seed(s in any_spec(), stream in 0u64..64) {
            let a = single_filter_corr_init(&s, &mut stream_rng(s.seed, stream)).unwrap();
            let b = single_filter_corr_init(&s, &mut stream_rng(s.seed, stream)).unwrap();
            prop_assert_eq!(a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn entries_within_strength_bound(s in any_spec()) {
            let d = single_filter_corr_init_detailed(&s, &mut stream_rng(s.seed, 0)).unwrap();
            for v in d.kernel.values() {
                prop_assert!(v.abs() <= d.strength_bound * (1.0 + 1e-12));
            }
        }

        #[test]
        fn center_dominates_without_noise(s in any_spec()) {
            let s = InitSpec { alpha: 0.0, ..s };
            let d = single_filter_corr_init_detailed(&s, &mut stream_rng(s.seed, 1)).unwrap();
            let at_center = d.kernel.get(d.center.0, d.center.1).abs();
            for v in d.kernel.values() {
                prop_assert!(at_center >= v.abs());
            }
            let locations = s.strategy.locations(s.k).unwrap();
            // Ties with equal magnitude are possible when a decay factor is 1.
            let argmax = d.kernel.argmax_abs();
            let argmax_mag = d.kernel.get(argmax.0, argmax.1).abs();
            prop_assert!(locations.contains(&argmax) || argmax_mag == at_center);
            prop_assert!(locations.contains(&d.center));
        }
    }
}
