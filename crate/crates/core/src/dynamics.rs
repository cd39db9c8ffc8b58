//! Gradient descent of a two-weight ReLU filter on a symmetric two-sample system.
//!
//! The optimum is `w* = (w*_0, 0)` and the samples are
//! `X = (1 + d0, -d1)`, `X' = (1 - d0, d1)` with targets `y = w*.X`. A sample
//! is active when `w.X > 0`; inactive samples contribute no gradient. One
//! step of full-batch gradient descent is
//!
//! ```text
//! w <- w - (lambda / 2) * sum_X grad(X),   grad(X) = -2 ((y - w.X) X)  if w.X > 0 else 0
//! ```
//!
//! With both samples active this is the linear recurrence
//!
//! ```text
//! w0 <- w0 + 2 lambda [ (w*0 - w0)(1 + d0^2) + w1 d0 d1 ]
//! w1 <- w1 - 2 lambda [ d0 d1 (w*0 - w0) + w1 d1^2 ]
//! ```
//!
//! [`StepMode::PaperRecurrence`] keeps the commonly quoted variant whose `w0`
//! cross term has the opposite sign; it differs from the exact update only
//! in terms of order `d0 * d1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Two weights.
pub type Weights = [f64; 2];

fn dot(a: Weights, b: Weights) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleSystem {
    pub d0: f64,
    pub d1: f64,
    pub w_star0: f64,
    /// Additive offsets on the targets `(y, y')`; zero reproduces the
    /// realizable setting. Only [`StepMode::GenericGradient`] sees them.
    #[serde(default)]
    pub target_noise: [f64; 2],
}

impl TwoSampleSystem {
    pub fn new(d0: f64, d1: f64, w_star0: f64) -> Result<Self> {
        let system = Self {
            d0,
            d1,
            w_star0,
            target_noise: [0.0; 2],
        };
        system.validate()?;
        Ok(system)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.d0) {
            return Err(invalid("d0", format!("{} outside [0, 1]", self.d0)));
        }
        if !(0.0..=1.0).contains(&self.d1) {
            return Err(invalid("d1", format!("{} outside [0, 1]", self.d1)));
        }
        if !self.w_star0.is_finite() {
            return Err(invalid("w_star0", "must be finite"));
        }
        Ok(())
    }

    pub fn w_star(&self) -> Weights {
        [self.w_star0, 0.0]
    }

    /// `[X, X']`.
    pub fn samples(&self) -> [Weights; 2] {
        [[1.0 + self.d0, -self.d1], [1.0 - self.d0, self.d1]]
    }

    /// `[y, y']`, including any target noise.
    pub fn targets(&self) -> [f64; 2] {
        let w = self.w_star();
        let [x, xp] = self.samples();
        [dot(w, x) + self.target_noise[0], dot(w, xp) + self.target_noise[1]]
    }

    /// `lambda` below which plain gradient descent on this system is stable,
    /// `1 / (2 max(|X|^2, |X'|^2))`.
    pub fn stability_bound(&self) -> f64 {
        let [x, xp] = self.samples();
        1.0 / (2.0 * dot(x, x).max(dot(xp, xp)))
    }

    pub fn active_count(&self, w: Weights) -> u8 {
        self.samples().iter().filter(|x| dot(w, **x) > 0.0).count() as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Gated per-sample gradients averaged over the two samples.
    #[default]
    GenericGradient,
    /// Exact all-active recurrence.
    CorrectedRecurrence,
    /// All-active recurrence with the sign-flipped `w0` cross term.
    PaperRecurrence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub system: TwoSampleSystem,
    pub w_init: Weights,
    pub lambda: f64,
    pub max_iters: usize,
    pub convergence_eps: f64,
    pub mode: StepMode,
}

impl DynamicsConfig {
    pub fn new(system: TwoSampleSystem, w_init: Weights, lambda: f64) -> Self {
        Self {
            system,
            w_init,
            lambda,
            max_iters: 100_000,
            convergence_eps: 1e-3,
            mode: StepMode::GenericGradient,
        }
    }

    pub fn with_mode(mut self, mode: StepMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        // lambda = 0 is allowed: it is the "no movement" control.
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(invalid("convergence_eps", "must be positive"));
        }
        if !self.w_init.iter().all(|v| v.is_finite()) {
            return Err(invalid("w_init", "must be finite"));
        }
        Ok(())
    }
}

/// Gradient of `(target - max(w.X, 0))^2` with respect to `w`, written as
/// `-2 (target - w.X) X` when the sample is active and zero otherwise.
pub fn generic_gradient(w: Weights, sample: Weights, target: f64) -> Weights {
    let pre = dot(w, sample);
    if pre > 0.0 {
        let r = target - pre;
        [-2.0 * r * sample[0], -2.0 * r * sample[1]]
    } else {
        [0.0, 0.0]
    }
}

/// One gradient-descent step. Returns the new weights.
///
/// The recurrence modes assume both samples are active; when neither sample
/// is active they return `w` unchanged like the gated gradient does.
pub fn step(w: Weights, config: &DynamicsConfig) -> Weights {
    let sys = &config.system;
    let lambda = config.lambda;
    match config.mode {
        StepMode::GenericGradient => {
            let samples = sys.samples();
            let targets = sys.targets();
            let mut total = [0.0; 2];
            for (x, y) in samples.iter().zip(targets) {
                let g = generic_gradient(w, *x, y);
                total[0] += g[0];
                total[1] += g[1];
            }
            let scale = lambda / samples.len() as f64;
            [w[0] - scale * total[0], w[1] - scale * total[1]]
        }
        _ if sys.active_count(w) == 0 => w,
        StepMode::CorrectedRecurrence => {
            let (d0, d1, e0) = (sys.d0, sys.d1, sys.w_star0 - w[0]);
            [
                w[0] + 2.0 * lambda * (e0 * (1.0 + d0 * d0) + w[1] * d1 * d0),
                w[1] - 2.0 * lambda * (d0 * d1 * e0 + w[1] * d1 * d1),
            ]
        }
        StepMode::PaperRecurrence => {
            let (d0, d1, e0) = (sys.d0, sys.d1, sys.w_star0 - w[0]);
            [
                w[0] + 2.0 * lambda * (d0 * d0 * e0 - d0 * d1 * w[1]) + 2.0 * lambda * e0,
                w[1] - 2.0 * lambda * (d0 * d1 * e0 + d1 * d1 * w[1]),
            ]
        }
    }
}

/// State at one iteration and the update applied from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub w: Weights,
    /// `w^(iter+1) - w^(iter)`; zero on the final record.
    pub update: Weights,
    pub active_count: u8,
    /// Whether this update's sign differs from the previous nonzero update.
    pub flipped: [bool; 2],
}

impl IterationRecord {
    /// Fraction of active samples, `r`.
    pub fn active_ratio(&self) -> f64 {
        f64::from(self.active_count) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Iterations taken to reach `|w - w*| < eps` (`None` if never reached).
    pub iterations_to_convergence: Option<usize>,
    pub zigzags: [usize; 2],
    /// Two consecutive iterations with no active sample and no movement.
    pub dead: bool,
}

/// Runs gradient descent until convergence, death, or `max_iters` steps.
pub fn run(config: &DynamicsConfig) -> Result<Trajectory> {
    config.validate()?;
    let w_star = config.system.w_star();
    let distance = |w: Weights| ((w[0] - w_star[0]).powi(2) + (w[1] - w_star[1]).powi(2)).sqrt();

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last_sign = [0.0f64; 2];
    let mut zigzags = [0usize; 2];
    let mut w = config.w_init;
    let mut converged = false;
    let mut dead = false;
    let mut idle_streak = 0;

    for iter in 0..=config.max_iters {
        let active_count = config.system.active_count(w);
        if distance(w) < config.convergence_eps {
            converged = true;
        }
        if converged || iter == config.max_iters {
            records.push(IterationRecord {
                iter,
                w,
                update: [0.0; 2],
                active_count,
                flipped: [false; 2],
            });
            break;
        }
        let next = step(w, config);
        let update = [next[0] - w[0], next[1] - w[1]];
        let mut flipped = [false; 2];
        for c in 0..2 {
            if update[c] != 0.0 {
                let sign = update[c].signum();
                if last_sign[c] != 0.0 && sign != last_sign[c] {
                    flipped[c] = true;
                    zigzags[c] += 1;
                }
                last_sign[c] = sign;
            }
        }
        records.push(IterationRecord {
            iter,
            w,
            update,
            active_count,
            flipped,
        });
        if active_count == 0 && update == [0.0, 0.0] {
            idle_streak += 1;
            if idle_streak >= 2 {
                dead = true;
                break;
            }
        } else {
            idle_streak = 0;
        }
        w = next;
    }

    let iterations_to_convergence = converged.then(|| records.last().map_or(0, |r| r.iter));
    Ok(Trajectory {
        records,
        converged,
        iterations_to_convergence,
        zigzags,
        dead,
    })
}

/// Result of [`zigzag_count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZigzagCount {
    pub flips: usize,
    /// False when fewer than two nonzero updates exist for the coordinate.
    pub defined: bool,
}

/// Number of sign changes between successive nonzero updates of `coordinate`.
pub fn zigzag_count(trajectory: &Trajectory, coordinate: usize) -> ZigzagCount {
    zigzag_of_updates(trajectory.records.iter().map(|r| r.update[coordinate]))
}

pub fn zigzag_of_updates(updates: impl IntoIterator<Item = f64>) -> ZigzagCount {
    let mut nonzero = 0;
    let mut flips = 0;
    let mut last = 0.0f64;
    for u in updates.into_iter().filter(|u| *u != 0.0) {
        if nonzero > 0 && u.signum() != last {
            flips += 1;
        }
        last = u.signum();
        nonzero += 1;
    }
    ZigzagCount {
        flips,
        defined: nonzero >= 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub w_init: Weights,
    pub converged: bool,
    pub iterations: Option<usize>,
    pub zigzags: [usize; 2],
    pub dead: bool,
}

impl From<(&Weights, &Trajectory)> for RunSummary {
    fn from((w_init, t): (&Weights, &Trajectory)) -> Self {
        Self {
            w_init: *w_init,
            converged: t.converged,
            iterations: t.iterations_to_convergence,
            zigzags: t.zigzags,
            dead: t.dead,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitComparison {
    pub aligned: RunSummary,
    pub orthogonal: RunSummary,
    /// `orthogonal iterations / aligned iterations`; `None` unless both converged.
    pub iteration_ratio: Option<f64>,
}

/// Relative tolerance on the two initial norms.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Runs an init parallel to `w*` against one with a large orthogonal component.
pub fn compare_inits(
    system: TwoSampleSystem,
    aligned: Weights,
    orthogonal: Weights,
    lambda: f64,
    max_iters: usize,
    eps: f64,
) -> Result<InitComparison> {
    let norm = |w: Weights| dot(w, w).sqrt();
    let (na, no) = (norm(aligned), norm(orthogonal));
    if (na - no).abs() > NORM_TOLERANCE * na.max(no) {
        return Err(Error::UnequalNorms(na, no));
    }
    let base = DynamicsConfig {
        max_iters,
        convergence_eps: eps,
        ..DynamicsConfig::new(system, aligned, lambda)
    };
    let ta = run(&base)?;
    let to = run(&DynamicsConfig {
        w_init: orthogonal,
        ..base
    })?;
    let iteration_ratio = match (ta.iterations_to_convergence, to.iterations_to_convergence) {
        (Some(a), Some(o)) if a > 0 => Some(o as f64 / a as f64),
        (Some(0), Some(0)) => Some(1.0),
        _ => None,
    };
    Ok(InitComparison {
        aligned: (&aligned, &ta).into(),
        orthogonal: (&orthogonal, &to).into(),
        iteration_ratio,
    })
}

impl Trajectory {
    /// Writes `iter,w0,w1,update0,update1,active_count,flip0,flip1`.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{}", crate::CSV_SCHEMA_LINE)?;
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "iter",
            "w0",
            "w1",
            "update0",
            "update1",
            "active_count",
            "flip0",
            "flip1",
        ])?;
        for r in &self.records {
            csv.write_record([
                r.iter.to_string(),
                r.w[0].to_string(),
                r.w[1].to_string(),
                r.update[0].to_string(),
                r.update[1].to_string(),
                r.active_count.to_string(),
                u8::from(r.flipped[0]).to_string(),
                u8::from(r.flipped[1]).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sys(d0: f64, d1: f64) -> TwoSampleSystem {
        TwoSampleSystem::new(d0, d1, 1.0).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let s = sys(0.1, 0.3);
        let [x, _] = s.samples();
        assert_eq!(generic_gradient(s.w_star(), x, s.targets()[0]), [0.0, 0.0]);
        assert_eq!(generic_gradient([-1.0, -1.0], [1.0, 1.0], 2.0), [0.0, 0.0]);

        let g = generic_gradient([0.5, 0.5], [1.1, -0.3], dot([1.0, 0.0], [1.1, -0.3]));
        assert!((g[0] - -1.54).abs() < 1e-12);
        assert!((g[1] - 0.42).abs() < 1e-12);
    }

    #[test]
    fn step_examples() {
        let s = sys(0.1, 0.3);
        for mode in [
            StepMode::GenericGradient,
            StepMode::CorrectedRecurrence,
            StepMode::PaperRecurrence,
        ] {
            let c = DynamicsConfig::new(s, [1.0, 0.0], 0.1).with_mode(mode);
            assert_eq!(step([1.0, 0.0], &c), [1.0, 0.0]);
            let zero = DynamicsConfig::new(s, [0.5, 0.5], 0.0).with_mode(mode);
            assert_eq!(step([0.5, 0.5], &zero), [0.5, 0.5]);
        }
        let c = DynamicsConfig::new(s, [0.5, 0.5], 0.1).with_mode(StepMode::CorrectedRecurrence);
        let w = step([0.5, 0.5], &c);
        assert!((w[0] - 0.604).abs() < 1e-12 && (w[1] - 0.488).abs() < 1e-12);
        let g = step([0.5, 0.5], &c.with_mode(StepMode::GenericGradient));
        assert!((g[0] - w[0]).abs() < 1e-12 && (g[1] - w[1]).abs() < 1e-12);
    }

    #[test]
    fn run_from_optimum_converges_immediately() {
        let t = run(&DynamicsConfig::new(sys(0.2, 0.2), [1.0, 0.0], 0.05)).unwrap();
        assert!(t.converged);
        assert_eq!(t.iterations_to_convergence, Some(0));
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.zigzags, [0, 0]);
    }

    #[test]
    fn dead_relu_never_converges() {
        let t = run(&DynamicsConfig::new(sys(0.2, 0.2), [-1.0, 0.0], 0.05)).unwrap();
        assert!(t.dead);
        assert!(!t.converged);
        assert!(t.records.iter().all(|r| r.active_count == 0 && r.update == [0.0, 0.0]));
    }

    #[test]
    fn aligned_start_keeps_w1_small_and_w0_monotone() {
        let c = DynamicsConfig::new(sys(0.2, 0.2), [0.3, 0.0], 0.05);
        let t = run(&c).unwrap();
        assert!(t.converged);
        let first = t.records.iter().find(|r| r.update[0] != 0.0).unwrap().update[0];
        assert!(first > 0.0);
        let w0_updates = t.records.iter().map(|r| r.update[0]);
        assert_eq!(zigzag_of_updates(w0_updates).flips, 0);
        for r in &t.records {
            assert!(r.w[1] <= 0.0);
            assert!(r.w[1].abs() < (1.0 - 0.3));
        }
    }

    #[test]
    fn zigzag_definition() {
        assert_eq!(zigzag_of_updates([1.0, 2.0, 3.0]).flips, 0);
        assert_eq!(zigzag_of_updates([1.0, -1.0, 1.0, -1.0]).flips, 3);
        assert_eq!(zigzag_of_updates([1.0, 0.0, -1.0]).flips, 1);
        let short = zigzag_of_updates([1.0]);
        assert_eq!(short, ZigzagCount { flips: 0, defined: false });
    }

    #[test]
    fn d1_zero_freezes_w1() {
        let c = DynamicsConfig::new(sys(0.3, 0.0), [0.4, 0.2], 0.05).with_mode(StepMode::CorrectedRecurrence);
        let t = run(&c).unwrap();
        let z = zigzag_count(&t, 1);
        assert_eq!(z.flips, 0);
        assert!(!z.defined);
        assert!(t.records.iter().all(|r| r.update[1] == 0.0));
    }

    #[test]
    fn compare_inits_examples() {
        let s = sys(0.3, 0.3);
        let c = compare_inits(s, [0.5, 0.0], [0.1, 0.49], 0.05, 100_000, 1e-3).unwrap();
        let (a, o) = (c.aligned.iterations.unwrap(), c.orthogonal.iterations.unwrap());
        assert!(a < o, "aligned {a} vs orthogonal {o}");
        assert!(c.iteration_ratio.unwrap() > 1.0);

        let same = compare_inits(s, [0.5, 0.0], [0.5, 0.0], 0.05, 100_000, 1e-3).unwrap();
        assert_eq!(same.aligned.iterations, same.orthogonal.iterations);
        assert_eq!(same.aligned.zigzags, same.orthogonal.zigzags);

        let frozen = compare_inits(s, [0.5, 0.0], [0.1, 0.49], 0.0, 1000, 1e-3).unwrap();
        assert!(!frozen.aligned.converged && !frozen.orthogonal.converged);
        assert_eq!(frozen.iteration_ratio, None);

        assert!(matches!(
            compare_inits(s, [0.5, 0.0], [0.1, 0.1], 0.05, 10, 1e-3),
            Err(Error::UnequalNorms(..))
        ));
    }

    #[test]
    fn single_active_sample_halves_update() {
        let s = sys(0.5, 0.9);
        let w = [0.2, -0.4];
        let [x, xp] = s.samples();
        assert!(dot(w, x) > 0.0 && dot(w, xp) <= 0.0);
        assert_eq!(s.active_count(w), 1);
        let c = DynamicsConfig::new(s, w, 0.1);
        let next = step(w, &c);
        let g = generic_gradient(w, x, s.targets()[0]);
        for i in 0..2 {
            assert!((next[i] - (w[i] - 0.1 / 2.0 * g[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let t = run(&DynamicsConfig::new(sys(0.2, 0.2), [1.0, 0.0], 0.05)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema=v1");
        assert_eq!(lines[1], "iter,w0,w1,update0,update1,active_count,flip0,flip1");
        assert_eq!(lines[2], "0,1,0,0,0,2,0,0");
    }

    proptest! {
        #[test]
        fn optimum_is_fixed_point(d0 in 0.0..=1.0f64, d1 in 0.0..=1.0f64, ws in 0.1..2.0f64, lambda in 0.0..0.5f64) {
            let s = TwoSampleSystem::new(d0, d1, ws).unwrap();
            for mode in [StepMode::GenericGradient, StepMode::CorrectedRecurrence, StepMode::PaperRecurrence] {
                let c = DynamicsConfig::new(s, s.w_star(), lambda).with_mode(mode);
                let w = step(s.w_star(), &c);
                prop_assert!((w[0] - ws).abs() < 1e-12 && w[1].abs() < 1e-12);
            }
        }

        #[test]
        fn updates_match_weight_differences(d0 in 0.0..=1.0f64, d1 in 0.0..=1.0f64,
                                            w0 in -1.0..1.5f64, w1 in -1.0..1.0f64) {
            let s = TwoSampleSystem::new(d0, d1, 1.0).unwrap();
            let c = DynamicsConfig { max_iters: 200, ..DynamicsConfig::new(s, [w0, w1], 0.05) };
            let t = run(&c).unwrap();
            for pair in t.records.windows(2) {
                for i in 0..2 {
                    prop_assert!((pair[1].w[i] - pair[0].w[i] - pair[0].update[i]).abs() < 1e-12);
                }
            }
            for r in &t.records {
                if r.active_count == 0 {
                    prop_assert_eq!(r.update, [0.0, 0.0]);
                }
            }
        }

        #[test]
        fn orthogonal_update_bound(d0 in 0.0..=1.0f64, d1 in 0.0..=1.0f64,
                                   w0 in 0.05..1.5f64, w1 in -0.5..0.5f64, lambda in 0.001..0.2f64) {
            let s = TwoSampleSystem::new(d0, d1, 1.0).unwrap();
            let c = DynamicsConfig::new(s, [w0, w1], lambda).with_mode(StepMode::CorrectedRecurrence);
            let next = step([w0, w1], &c);
            prop_assume!(s.active_count([w0, w1]) > 0);
            let bound = 2.0 * lambda * d1 * ((1.0 - w0).abs() + w1.abs());
            prop_assert!((next[1] - w1).abs() <= bound + 1e-15);
        }
    }
}
