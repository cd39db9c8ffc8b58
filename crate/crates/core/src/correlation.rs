//! Pearson correlation of filter weights as a function of grid distance.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LayerTensor;

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewElements { needed: 2, got: n });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if is_constant(xs, sxx) || is_constant(ys, syy) {
        return Err(Error::UndefinedCorrelation("constant series"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// A series whose squared spread is at rounding level of its magnitude.
fn is_constant(values: &[f64], centred_ss: f64) -> bool {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    centred_ss <= (values.len() as f64) * (scale * 64.0 * f64::EPSILON).powi(2)
}

/// `|pearson(a_x xs + b_x, a_y ys + b_y) - pearson(xs, ys)|`.
///
/// Positive scales leave the coefficient unchanged; a negative scale on one
/// side flips its sign, so the deviation becomes `2|rho|`.
pub fn affine_invariance_check(
    xs: &[f64],
    ys: &[f64],
    a_x: f64,
    b_x: f64,
    a_y: f64,
    b_y: f64,
) -> Result<f64> {
    let fx: Vec<f64> = xs.iter().map(|x| a_x * x + b_x).collect();
    let fy: Vec<f64> = ys.iter().map(|y| a_y * y + b_y).collect();
    Ok((pearson(&fx, &fy)? - pearson(xs, ys)?).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub distance: f64,
    pub mean_pearson: f64,
    /// Position pairs with a defined coefficient.
    pub n_pairs: usize,
}

/// Mean Pearson coefficient per index distance, keyed by squared distance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub entries: BTreeMap<u32, ProfileEntry>,
    /// Position pairs skipped because one position was constant across kernels.
    pub skipped_pairs: usize,
}

impl CorrelationProfile {
    /// Entry at Euclidean distance `d` (matched within 1e-9).
    pub fn at(&self, d: f64) -> Option<&ProfileEntry> {
        let sq = (d * d).round();
        if ((d * d) - sq).abs() > 1e-9 {
            return None;
        }
        self.entries.get(&(sq as u32))
    }

    pub fn mean_at(&self, d: f64) -> Option<f64> {
        self.at(d).map(|e| e.mean_pearson)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes `distance,mean_pearson,n_pairs`.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{}", crate::CSV_SCHEMA_LINE)?;
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["distance", "mean_pearson", "n_pairs"])?;
        for e in self.entries.values() {
            csv.write_record([
                e.distance.to_string(),
                e.mean_pearson.to_string(),
                e.n_pairs.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Distance profile of a layer.
///
/// For each unordered pair of kernel positions `(p, q)` the values
/// `(w_p, w_q)` of every `(filter, channel)` kernel form two series whose
/// Pearson coefficient is computed. Coefficients are averaged, with equal
/// weight, over all pairs at the same index distance `|p - q|`.
pub fn distance_profile(layer: &LayerTensor) -> Result<CorrelationProfile> {
    let k = layer.k();
    let slots = layer.n_kernels();
    if slots < 2 {
        return Err(Error::TooFewElements { needed: 2, got: slots });
    }
    let positions = k * k;
    // Column-major copy: one series per kernel position.
    let mut series = vec![Vec::with_capacity(slots); positions];
    for kernel in layer.kernels() {
        for (p, v) in kernel.iter().enumerate() {
            series[p].push(*v);
        }
    }
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for p in 0..positions {
        for q in p + 1..positions {
            let (px, py) = ((p / k) as i64, (p % k) as i64);
            let (qx, qy) = ((q / k) as i64, (q % k) as i64);
            let sq = ((px - qx).pow(2) + (py - qy).pow(2)) as u32;
            match pearson(&series[p], &series[q]) {
                Ok(r) => {
                    let e = sums.entry(sq).or_insert((0.0, 0));
                    e.0 += r;
                    e.1 += 1;
                }
                Err(Error::UndefinedCorrelation(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let entries = sums
        .into_iter()
        .map(|(sq, (sum, n))| {
            (
                sq,
                ProfileEntry {
                    distance: f64::from(sq).sqrt(),
                    mean_pearson: sum / n as f64,
                    n_pairs: n,
                },
            )
        })
        .collect();
    Ok(CorrelationProfile {
        entries,
        skipped_pairs: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{layer_init, uncorrelated_layer, InitSpec, LocationStrategy};
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson(&xs, &xs).unwrap(), 1.0);
        let neg: Vec<f64> = xs.iter().map(|x| -2.0 * x + 5.0).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(pearson(&[0.1; 7], &[0.2; 7]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn affine_examples() {
        let xs = [0.3, -1.2, 2.2, 0.7, 0.1];
        let ys = [1.0, 0.4, -0.5, 2.0, 0.9];
        assert!(affine_invariance_check(&xs, &ys, 2.5, -3.0, 2.5, -3.0).unwrap() < 1e-12);
        assert_eq!(affine_invariance_check(&xs, &ys, 1.0, 0.0, 1.0, 0.0).unwrap(), 0.0);
        let rho = pearson(&xs, &ys).unwrap();
        let flipped = affine_invariance_check(&xs, &ys, 1.0, 0.0, -2.0, 1.0).unwrap();
        assert!((flipped - 2.0 * rho.abs()).abs() < 1e-12);
    }

    #[test]
    fn center_layer_is_perfectly_correlated() {
        let spec = InitSpec {
            strategy: LocationStrategy::Center,
            alpha: 0.0,
            seed: 4,
            ..InitSpec::for_layer(3, 16, 8)
        };
        let profile = distance_profile(&layer_init(16, 8, &spec).unwrap()).unwrap();
        assert_eq!(profile.skipped_pairs, 0);
        for e in profile.entries.values() {
            assert!((e.mean_pearson - 1.0).abs() < 1e-9, "{e:?}");
        }
        let counts: Vec<usize> = profile.entries.values().map(|e| e.n_pairs).collect();
        // 3x3 grid: d^2 = 1, 2, 4, 5, 8.
        assert_eq!(counts, vec![12, 8, 6, 8, 2]);
    }

    #[test]
    fn uncorrelated_layer_is_near_zero() {
        let layer = uncorrelated_layer(100, 100, 3, 21).unwrap();
        let profile = distance_profile(&layer).unwrap();
        for e in profile.entries.values() {
            assert!(e.mean_pearson.abs() < 0.05, "{e:?}");
        }
    }

    #[test]
    fn constant_layer_is_skipped() {
        let layer = LayerTensor::new([4, 1, 3, 3], vec![0.5; 36]).unwrap();
        let profile = distance_profile(&layer).unwrap();
        assert!(profile.is_empty());
        assert_eq!(profile.skipped_pairs, 36);
    }

    #[test]
    fn single_kernel_is_rejected() {
        let layer = LayerTensor::new([1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        assert!(distance_profile(&layer).is_err());
    }

    #[test]
    fn profile_csv() {
        let layer = uncorrelated_layer(4, 4, 3, 1).unwrap();
        let mut buf = Vec::new();
        distance_profile(&layer).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# schema=v1"));
        assert_eq!(lines.next(), Some("distance,mean_pearson,n_pairs"));
        assert_eq!(lines.count(), 5);
    }

    fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-10.0..10.0f64, n),
                proptest::collection::vec(-10.0..10.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((xs, ys) in series()) {
            if let (Ok(a), Ok(b)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
                prop_assert_eq!(a, b);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn positive_affine_invariance((xs, ys) in series(),
                                      ax in 0.1..10.0f64, bx in -5.0..5.0f64,
                                      ay in 0.1..10.0f64, by in -5.0..5.0f64) {
            if let Ok(d) = affine_invariance_check(&xs, &ys, ax, bx, ay, by) {
                prop_assert!(d < 1e-12, "deviation {}", d);
            }
        }
    }
}
