//! Output magnitude of a deep stack of constant-input 1D convolutions.
//!
//! Each of `l` layers applies one width-`k` filter to a constant input, so
//! the output is `|c^l| = prod_i |sum_j w^i_j|` with `c^0 = 1`. Weights are
//! uniform on `[-u, u]`, either all equal within a layer (correlated) or
//! independent (uncorrelated). Layers are independent, so
//! `E|c^l| = E[|S_k|]^l` where `S_k` is the sum of one layer's weights.
//!
//! References provided for the estimate:
//!
//! * correlated: `(k u / 2)^l`, exact;
//! * uncorrelated, CLT with `Var(w) = u^2 / 3`: `(u sqrt(2k / (3 pi)))^l`;
//! * uncorrelated, CLT with `Var(w) = u^2 / 12` as commonly quoted:
//!   `(u sqrt(k / (6 pi)))^l`, exactly half the previous per layer;
//! * uncorrelated, exact: [`exact_abs_sum_expectation`]`^l` from the
//!   Irwin-Hall law.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, symmetric_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    Correlated,
    Uncorrelated,
}

impl PropagationMode {
    pub fn name(self) -> &'static str {
        match self {
            PropagationMode::Correlated => "correlated",
            PropagationMode::Uncorrelated => "uncorrelated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormVariant {
    /// Uses `Var(U(-u, u)) = u^2 / 12`.
    PaperAsWritten,
    /// Uses `Var(U(-u, u)) = u^2 / 3`.
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub k: usize,
    pub l: usize,
    pub u: f64,
    pub mode: PropagationMode,
    pub trials: usize,
    pub seed: u64,
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if !(self.u > 0.0) || !self.u.is_finite() {
            return Err(invalid("u", format!("must be positive, got {}", self.u)));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub config: PropagationConfig,
    pub mc_estimate: f64,
    /// Standard error of the mean; 0 when undefined (one trial).
    pub mc_stderr: f64,
    pub stderr_defined: bool,
    pub closed_form_paper: f64,
    pub closed_form_corrected: f64,
    /// Exact `E[|S_k|]^l` (uncorrelated) or `(k u / 2)^l` (correlated) when `k <= 12`.
    pub exact: Option<f64>,
    /// Monte Carlo mean of `|c^i|` for `i = 0..=l`.
    pub layer_trace: Vec<f64>,
}

/// `prod_i |sum_j w^i_j|` for explicit per-layer weights.
pub fn output_magnitude(layers: &[&[f64]]) -> f64 {
    layers.iter().map(|w| w.iter().sum::<f64>().abs()).product()
}

/// Draws one realisation of `|c^l|`.
///
/// Per layer the generator gives one weight (correlated, repeated `k` times)
/// or `k` independent weights (uncorrelated), in layer order.
pub fn sample_output_magnitude<R: Rng + ?Sized>(
    k: usize,
    l: usize,
    u: f64,
    mode: PropagationMode,
    rng: &mut R,
) -> f64 {
    let mut c = 1.0;
    for _ in 0..l {
        c *= layer_factor(k, u, mode, rng);
    }
    c
}

fn layer_factor<R: Rng + ?Sized>(k: usize, u: f64, mode: PropagationMode, rng: &mut R) -> f64 {
    match mode {
        PropagationMode::Correlated => (k as f64 * symmetric_uniform(rng, u)).abs(),
        PropagationMode::Uncorrelated => (0..k).map(|_| symmetric_uniform(rng, u)).sum::<f64>().abs(),
    }
}

/// Per-trial trace `|c^0|, ..., |c^l|` from trial `t`'s own stream.
fn trial_trace(config: &PropagationConfig, trial: usize, trace: &mut [f64]) {
    let mut rng = stream_rng(config.seed, trial as u64);
    let mut c = 1.0;
    trace[0] = c;
    for slot in trace.iter_mut().skip(1) {
        c *= layer_factor(config.k, config.u, config.mode, &mut rng);
        *slot = c;
    }
}

fn summarise(config: &PropagationConfig, traces: &[f64]) -> PropagationReport {
    let width = config.l + 1;
    let n = config.trials as f64;
    let mut layer_trace = vec![0.0; width];
    for row in traces.chunks_exact(width) {
        for (acc, v) in layer_trace.iter_mut().zip(row) {
            *acc += v;
        }
    }
    layer_trace.iter_mut().for_each(|v| *v /= n);
    let mean = layer_trace[config.l];
    let (stderr, defined) = if config.trials > 1 {
        let ss: f64 = traces
            .chunks_exact(width)
            .map(|row| (row[config.l] - mean).powi(2))
            .sum();
        ((ss / (n - 1.0) / n).sqrt(), true)
    } else {
        (0.0, false)
    };
    PropagationReport {
        config: *config,
        mc_estimate: mean,
        mc_stderr: stderr,
        stderr_defined: defined,
        closed_form_paper: closed_form(config.k, config.l, config.u, config.mode, ClosedFormVariant::PaperAsWritten),
        closed_form_corrected: closed_form(config.k, config.l, config.u, config.mode, ClosedFormVariant::Corrected),
        exact: exact_expectation(config.k, config.l, config.u, config.mode),
        layer_trace,
    }
}

/// Monte Carlo estimate of `E|c^l|`; trial `t` uses `stream_rng(seed, t)`.
pub fn monte_carlo_expectation(config: &PropagationConfig) -> Result<PropagationReport> {
    config.validate()?;
    let width = config.l + 1;
    let mut traces = vec![0.0; config.trials * width];
    for (t, row) in traces.chunks_exact_mut(width).enumerate() {
        trial_trace(config, t, row);
    }
    Ok(summarise(config, &traces))
}

/// Same estimate as [`monte_carlo_expectation`], with trials spread over
/// the rayon pool. Sums are taken serially afterwards, so the result is
/// bit-identical.
pub fn monte_carlo_expectation_par(config: &PropagationConfig) -> Result<PropagationReport> {
    config.validate()?;
    let width = config.l + 1;
    let mut traces = vec![0.0; config.trials * width];
    traces
        .par_chunks_exact_mut(width)
        .enumerate()
        .for_each(|(t, row)| trial_trace(config, t, row));
    Ok(summarise(config, &traces))
}

/// Factorised estimator: estimates `E|S_k|` from `trials * l` independent
/// layer draws and reports its `l`-th power, with a delta-method standard
/// error.
pub fn monte_carlo_factorized(config: &PropagationConfig) -> Result<(f64, f64)> {
    config.validate()?;
    if config.l == 0 {
        return Ok((1.0, 0.0));
    }
    let draws = config.trials * config.l;
    let mut rng = stream_rng(config.seed, u64::MAX);
    let samples: Vec<f64> = (0..draws)
        .map(|_| layer_factor(config.k, config.u, config.mode, &mut rng))
        .collect();
    let n = draws as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let se = if draws > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let l = config.l as i32;
    Ok((mean.powi(l), f64::from(l) * mean.powi(l - 1) * se))
}

/// Closed-form `E|c^l|`.
pub fn closed_form(k: usize, l: usize, u: f64, mode: PropagationMode, variant: ClosedFormVariant) -> f64 {
    let k = k as f64;
    let per_layer = match (mode, variant) {
        (PropagationMode::Correlated, _) => k * u / 2.0,
        (PropagationMode::Uncorrelated, ClosedFormVariant::PaperAsWritten) => (k * u * u / (6.0 * PI)).sqrt(),
        (PropagationMode::Uncorrelated, ClosedFormVariant::Corrected) => (2.0 * k * u * u / (3.0 * PI)).sqrt(),
    };
    per_layer.powi(l as i32)
}

fn exact_expectation(k: usize, l: usize, u: f64, mode: PropagationMode) -> Option<f64> {
    match mode {
        PropagationMode::Correlated => Some((k as f64 * u / 2.0).powi(l as i32)),
        PropagationMode::Uncorrelated => exact_abs_sum_expectation(k, u).ok().map(|e| e.powi(l as i32)),
    }
}

/// Largest `k` accepted by [`exact_abs_sum_expectation`].
pub const MAX_EXACT_K: usize = 12;

/// `E|S_k|` for `S_k` the sum of `k` independent `U(-u, u)` variables.
///
/// Writes `S_k = u (2 H - k)` with `H` Irwin-Hall of order `k`, so
/// `E|S_k| = 2u E|H - k/2|`. Integrating the Irwin-Hall CDF gives
/// `E[(c - H)_+] = sum_{j <= c} (-1)^j C(k, j) (c - j)^(k+1) / (k+1)!`, and by
/// symmetry about `k/2`, `E|H - k/2| = 2 E[(k/2 - H)_+]`.
pub fn exact_abs_sum_expectation(k: usize, u: f64) -> Result<f64> {
    if k == 0 || k > MAX_EXACT_K {
        return Err(Error::UnsupportedK { k });
    }
    let c = k as f64 / 2.0;
    let mut sum = 0.0;
    let mut binom = 1.0;
    for j in 0..=(k / 2) {
        let term = binom * (c - j as f64).powi(k as i32 + 1);
        sum += if j % 2 == 0 { term } else { -term };
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    let factorial: f64 = (1..=k + 1).map(|i| i as f64).product();
    Ok(2.0 * u * 2.0 * sum / factorial)
}

/// `closed_form(Correlated) / closed_form(Uncorrelated, Corrected)`,
/// i.e. `sqrt(3 pi k / 8)^l`; independent of `u`.
pub fn mode_ratio(k: usize, l: usize, u: f64) -> f64 {
    closed_form(k, l, u, PropagationMode::Correlated, ClosedFormVariant::Corrected)
        / closed_form(k, l, u, PropagationMode::Uncorrelated, ClosedFormVariant::Corrected)
}

impl PropagationReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes a sweep table with one row per report.
pub fn write_sweep_csv<W: Write>(mut writer: W, reports: &[PropagationReport]) -> Result<()> {
    writeln!(writer, "{}", crate::CSV_SCHEMA_LINE)?;
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "k",
        "l",
        "u",
        "mode",
        "trials",
        "seed",
        "estimate",
        "stderr",
        "closed_form_paper",
        "closed_form_corrected",
        "exact",
    ])?;
    for r in reports {
        let c = &r.config;
        csv.write_record([
            c.k.to_string(),
            c.l.to_string(),
            c.u.to_string(),
            c.mode.name().to_string(),
            c.trials.to_string(),
            c.seed.to_string(),
            r.mc_estimate.to_string(),
            r.mc_stderr.to_string(),
            r.closed_form_paper.to_string(),
            r.closed_form_corrected.to_string(),
            r.exact.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    /// Irwin-Hall density of order `k` on `[0, k]`.
    fn irwin_hall_pdf(k: usize, x: f64) -> f64 {
        if !(0.0..=k as f64).contains(&x) {
            return 0.0;
        }
        let fact: f64 = (1..k).map(|i| i as f64).product();
        let mut binom = 1.0;
        let mut s = 0.0;
        for j in 0..=(x.floor() as usize).min(k) {
            let t = binom * (x - j as f64).powi(k as i32 - 1);
            s += if j % 2 == 0 { t } else { -t };
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
        s / fact
    }

    /// E|S_k| by composite Gauss-Legendre quadrature of |2x - k| f(x) on each
    /// unit piece, where the density is a polynomial of degree k-1.
    fn quadrature_oracle(k: usize) -> f64 {
        // 5-point rule is exact up to degree 9; split pieces at k/2 as well.
        let nodes = [
            (0.0, 0.568_888_888_888_888_9),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
            (0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
        ];
        let mut cuts: Vec<f64> = (0..=k).map(|i| i as f64).collect();
        cuts.push(k as f64 / 2.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            // subdivide further so the degree limit never matters for k <= 12
            let parts = 16;
            for p in 0..parts {
                let lo = a + (b - a) * p as f64 / parts as f64;
                let hi = a + (b - a) * (p + 1) as f64 / parts as f64;
                let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
                for (t, wt) in nodes {
                    let x = mid + half * t;
                    total += wt * half * (2.0 * x - k as f64).abs() * irwin_hall_pdf(k, x);
                }
            }
        }
        total
    }

    #[test]
    fn exact_spot_values() {
        assert!((exact_abs_sum_expectation(1, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((exact_abs_sum_expectation(2, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((exact_abs_sum_expectation(3, 1.0).unwrap() - 0.8125).abs() < 1e-15);
        assert!((exact_abs_sum_expectation(3, 2.0).unwrap() - 1.625).abs() < 1e-15);
        assert!(matches!(exact_abs_sum_expectation(0, 1.0), Err(Error::UnsupportedK { k: 0 })));
        assert!(matches!(exact_abs_sum_expectation(13, 1.0), Err(Error::UnsupportedK { k: 13 })));
    }

    #[test]
    fn exact_matches_quadrature_oracle() {
        for k in 1..=MAX_EXACT_K {
            let exact = exact_abs_sum_expectation(k, 1.0).unwrap();
            let quad = quadrature_oracle(k);
            assert!((exact - quad).abs() < 1e-10, "k={k}: {exact} vs {quad}");
        }
    }

    #[test]
    fn sample_examples() {
        let mut rng = stream_rng(0, 0);
        assert_eq!(sample_output_magnitude(3, 0, 1.0, PropagationMode::Uncorrelated, &mut rng), 1.0);
        assert!((output_magnitude(&[&[0.4, 0.4, 0.4]]) - 1.2).abs() < 1e-15);
        // k = 1 erases correlation: both modes consume the same single draw.
        for seed in 0..50 {
            let a = sample_output_magnitude(1, 1, 0.7, PropagationMode::Correlated, &mut stream_rng(seed, 0));
            let b = sample_output_magnitude(1, 1, 0.7, PropagationMode::Uncorrelated, &mut stream_rng(seed, 0));
            assert_eq!(a, b);
            assert!(a <= 0.7);
        }
    }

    #[test]
    fn closed_form_examples() {
        let c = closed_form(3, 5, 1.0, PropagationMode::Correlated, ClosedFormVariant::PaperAsWritten);
        assert!((c - 7.59375).abs() < 1e-12);
        let p = closed_form(3, 1, 1.0, PropagationMode::Uncorrelated, ClosedFormVariant::PaperAsWritten);
        assert!((p - (3.0 / (6.0 * PI)).sqrt()).abs() < 1e-15);
        assert!((p - 0.398_942_3).abs() < 1e-6);
        let q = closed_form(3, 1, 1.0, PropagationMode::Uncorrelated, ClosedFormVariant::Corrected);
        assert!((q - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert!(((q - 0.8125) / 0.8125).abs() < 0.02);
    }

    #[test]
    fn mode_ratio_examples() {
        assert!((mode_ratio(1, 1, 1.0) - 0.5 / (2.0 / (3.0 * PI)).sqrt()).abs() < 1e-12);
        assert!((mode_ratio(1, 1, 1.0) - 1.085_402).abs() < 1e-6);
        assert!((mode_ratio(4, 1, 1.0) / mode_ratio(1, 1, 1.0) - 2.0).abs() < 1e-12);
        assert_eq!(mode_ratio(3, 0, 1.0), 1.0);
        assert!((mode_ratio(5, 2, 0.3) - mode_ratio(5, 2, 7.0)).abs() < 1e-9);
    }

    #[test]
    fn single_trial_has_no_stderr() {
        let c = PropagationConfig {
            k: 3,
            l: 2,
            u: 1.0,
            mode: PropagationMode::Uncorrelated,
            trials: 1,
            seed: 9,
        };
        let r = monte_carlo_expectation(&c).unwrap();
        let single = sample_output_magnitude(3, 2, 1.0, PropagationMode::Uncorrelated, &mut stream_rng(9, 0));
        assert_eq!(r.mc_estimate, single);
        assert_eq!(r.mc_stderr, 0.0);
        assert!(!r.stderr_defined);
    }

    #[test]
    fn zero_depth_is_one() {
        let c = PropagationConfig {
            k: 3,
            l: 0,
            u: 1.0,
            mode: PropagationMode::Correlated,
            trials: 100,
            seed: 1,
        };
        let r = monte_carlo_expectation(&c).unwrap();
        assert_eq!(r.mc_estimate, 1.0);
        assert_eq!(r.mc_stderr, 0.0);
    }

    #[test]
    fn parallel_reproduces_serial() {
        let c = PropagationConfig {
            k: 5,
            l: 3,
            u: 1.0,
            mode: PropagationMode::Uncorrelated,
            trials: 20_000,
            seed: 42,
        };
        let a = monte_carlo_expectation(&c).unwrap();
        let b = monte_carlo_expectation_par(&c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn factorized_estimator_agrees() {
        let c = PropagationConfig {
            k: 3,
            l: 2,
            u: 1.0,
            mode: PropagationMode::Uncorrelated,
            trials: 200_000,
            seed: 3,
        };
        let (est, se) = monte_carlo_factorized(&c).unwrap();
        let exact = 0.8125f64.powi(2);
        assert!((est - exact).abs() < 4.0 * se, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn rejects_zero_trials() {
        let c = PropagationConfig {
            k: 3,
            l: 1,
            u: 1.0,
            mode: PropagationMode::Correlated,
            trials: 0,
            seed: 0,
        };
        assert!(monte_carlo_expectation(&c).is_err());
    }
}
