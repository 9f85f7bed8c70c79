//! Scalar building blocks for split conformal prediction.
//!
//! Scores are absolute residuals of a fixed predictor. The calibration
//! threshold is the `⌈(1−α)(m+1)⌉`-th smallest of `m` calibration scores, so
//! that membership of a label in [`build_interval`]'s output is equivalent to
//! its conformal p-value exceeding `α`. Both sides of that equivalence are
//! computed from the same floating product `α·(m+1)`, which makes the
//! duality exact rather than approximate.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A feature/label pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
}

impl Observation {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Domain(format!(
                "observation must be finite, got ({x}, {y})"
            )));
        }
        Ok(Self { x, y })
    }
}

/// Target miscoverage level, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Level(f64);

impl Level {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::Config(format!(
                "miscoverage level must lie in (0, 1), got {alpha}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Level {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Level> for f64 {
    fn from(level: Level) -> f64 {
        level.0
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Half-width of a symmetric prediction set.
///
/// `Infinite` is the whole real line; `Empty` is only produced by the ACI
/// baseline once its working level reaches one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Empty,
    Finite(f64),
    Infinite,
}

impl Radius {
    pub fn is_infinite(self) -> bool {
        matches!(self, Radius::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Radius::Finite(r) => Some(r),
            _ => None,
        }
    }

    /// Whether a non-conformity score is accepted by this threshold.
    #[inline]
    pub fn admits(self, score: f64) -> bool {
        match self {
            Radius::Empty => false,
            Radius::Finite(r) => score <= r,
            Radius::Infinite => true,
        }
    }

    /// The tighter of two radii (intersection of two intervals sharing a center).
    pub fn min(self, other: Radius) -> Radius {
        match (self, other) {
            (Radius::Empty, _) | (_, Radius::Empty) => Radius::Empty,
            (Radius::Infinite, r) | (r, Radius::Infinite) => r,
            (Radius::Finite(a), Radius::Finite(b)) => Radius::Finite(a.min(b)),
        }
    }
}

impl PartialOrd for Radius {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use Radius::*;
        match (self, other) {
            (Empty, Empty) | (Infinite, Infinite) => Some(Ordering::Equal),
            (Empty, _) | (_, Infinite) => Some(Ordering::Less),
            (_, Empty) | (Infinite, _) => Some(Ordering::Greater),
            (Finite(a), Finite(b)) => a.partial_cmp(b),
        }
    }
}

/// Closed interval `[center − radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub center: f64,
    pub radius: Radius,
}

impl Interval {
    pub fn new(center: f64, radius: Radius) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.radius.admits((y - self.center).abs())
    }

    pub fn length(&self) -> f64 {
        match self.radius {
            Radius::Empty => 0.0,
            Radius::Finite(r) => 2.0 * r,
            Radius::Infinite => f64::INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        match self.radius {
            Radius::Empty => f64::NAN,
            Radius::Finite(r) => self.center - r,
            Radius::Infinite => f64::NEG_INFINITY,
        }
    }

    pub fn upper(&self) -> f64 {
        match self.radius {
            Radius::Empty => f64::NAN,
            Radius::Finite(r) => self.center + r,
            Radius::Infinite => f64::INFINITY,
        }
    }
}

/// Absolute-residual non-conformity score around a plug-in predictor.
#[derive(Clone)]
pub struct ScoreFunction {
    predictor: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ScoreFunction {
    pub fn absolute_residual<F>(predictor: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            predictor: Arc::new(predictor),
        }
    }

    /// `x ↦ slope·x`, the oracle model of the synthetic experiments.
    pub fn linear(slope: f64) -> Self {
        Self::absolute_residual(move |x| slope * x)
    }

    #[inline]
    pub fn predict(&self, x: f64) -> f64 {
        (self.predictor)(x)
    }

    #[inline]
    pub fn score(&self, x: f64, y: f64) -> f64 {
        (self.predict(x) - y).abs()
    }
}

impl fmt::Debug for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreFunction")
            .field("kind", &"absolute_residual")
            .finish_non_exhaustive()
    }
}

/// Conformal p-value kept as an unreduced fraction `count / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PValue {
    /// `1 + #{calibration scores ≥ test score}`.
    pub count: usize,
    /// `m + 1`.
    pub total: usize,
}

impl PValue {
    pub fn value(self) -> f64 {
        self.count as f64 / self.total as f64
    }

    /// `p > α`, evaluated as `count > α·total` so it agrees bit-for-bit with
    /// [`conformal_threshold`].
    #[inline]
    pub fn exceeds(self, alpha: f64) -> bool {
        (self.count as f64) > alpha * self.total as f64
    }
}

/// `Q̂_m(β)`: the `⌈mβ⌉`-th smallest score.
pub fn empirical_quantile(scores: &[f64], beta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Domain("empty calibration".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {beta}")));
    }
    let m = scores.len();
    let k = ((m as f64 * beta).ceil() as usize).clamp(1, m);
    Ok(kth_smallest(scores, k))
}

/// Number of calibration scores that may exceed the threshold:
/// `⌊α(m+1)⌋`, clamped to `0..=m+1`.
#[inline]
fn excess_budget(alpha: f64, m: usize) -> usize {
    let raw = (alpha * (m + 1) as f64).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(m + 1)
    }
}

/// Order-statistic rank `k = ⌈(1−α)(m+1)⌉` of the conformal threshold,
/// clamped into `1..=m+1`. `k = m + 1` means the threshold is infinite.
pub fn threshold_rank(alpha: f64, m: usize) -> usize {
    (m + 1 - excess_budget(alpha, m)).max(1)
}

/// The `⌈(1−α)(m+1)⌉`-th smallest calibration score, or `Infinite` when that
/// rank exceeds `m` (in particular for an empty calibration set).
///
/// Levels outside `(0, 1)` are tolerated: the rank is clamped into
/// `1..=m+1`.
pub fn conformal_threshold(cal_scores: &[f64], alpha: f64) -> Radius {
    let m = cal_scores.len();
    let k = threshold_rank(alpha, m);
    if k > m {
        Radius::Infinite
    } else {
        Radius::Finite(kth_smallest(cal_scores, k))
    }
}

/// `(1 + #{cal ≥ test}) / (m + 1)`; ties count toward the numerator.
pub fn conformal_p_value(cal_scores: &[f64], test_score: f64) -> PValue {
    let at_least = cal_scores.iter().filter(|&&s| s >= test_score).count();
    PValue {
        count: 1 + at_least,
        total: cal_scores.len() + 1,
    }
}

pub fn build_interval(x_t: f64, score_fn: &ScoreFunction, threshold: Radius) -> Interval {
    Interval::new(score_fn.predict(x_t), threshold)
}

/// `k`-th smallest (1-based) via selection; `k` must be in `1..=len`.
pub(crate) fn kth_smallest(values: &[f64], k: usize) -> f64 {
    debug_assert!(k >= 1 && k <= values.len());
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_quantile_examples() {
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[7.0], 0.99).unwrap(), 7.0);
        // explicit sort: [1,2,3,4,5], ceil(5*0.8) = 4
        let mut sorted = vec![3.0, 1.0, 2.0, 5.0, 4.0];
        sorted.sort_by(f64::total_cmp);
        let expected = sorted[(5.0f64 * 0.8).ceil() as usize - 1];
        assert_eq!(expected, 4.0);
        assert_eq!(
            empirical_quantile(&[3.0, 1.0, 2.0, 5.0, 4.0], 0.8).unwrap(),
            expected
        );
    }

    #[test]
    fn empirical_quantile_rejects_empty() {
        let err = empirical_quantile(&[], 0.5).unwrap_err();
        assert!(err.to_string().contains("empty calibration"));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(
            conformal_threshold(&[1.0, 2.0, 3.0, 4.0], 0.4),
            Radius::Finite(3.0)
        );
        assert_eq!(conformal_threshold(&[1.0, 2.0], 0.1), Radius::Infinite);
        assert_eq!(conformal_threshold(&[], 0.4), Radius::Infinite);
    }

    #[test]
    fn threshold_clamps_out_of_range_levels() {
        let s = [4.0, 1.0, 3.0];
        assert_eq!(conformal_threshold(&s, -0.3), Radius::Infinite);
        assert_eq!(conformal_threshold(&s, 0.0), Radius::Infinite);
        assert_eq!(conformal_threshold(&s, 1.0), Radius::Finite(1.0));
        assert_eq!(conformal_threshold(&s, 2.5), Radius::Finite(1.0));
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(conformal_p_value(&[1.0, 2.0, 3.0], 4.0).value(), 0.25);
        assert_eq!(conformal_p_value(&[1.0, 2.0, 3.0], 0.0).value(), 1.0);
        assert_eq!(conformal_p_value(&[5.0], 5.0).value(), 1.0);
        assert_eq!(conformal_p_value(&[], 5.0), PValue { count: 1, total: 1 });
    }

    #[test]
    fn interval_examples() {
        let f = ScoreFunction::linear(1.0);
        let i = build_interval(1.0, &f, Radius::Finite(0.5));
        assert_eq!((i.lower(), i.upper()), (0.5, 1.5));
        let i = build_interval(2.0, &f, Radius::Infinite);
        assert_eq!((i.lower(), i.upper()), (f64::NEG_INFINITY, f64::INFINITY));
        assert!(i.contains(1e300));
        let i = build_interval(0.3, &f, Radius::Finite(3.0));
        assert!((i.lower() + 2.7).abs() < 1e-12 && (i.upper() - 3.3).abs() < 1e-12);
        assert_eq!(i.length(), 6.0);
    }

    #[test]
    fn closed_interval_membership() {
        let i = Interval::new(0.0, Radius::Finite(1.0));
        assert!(i.contains(1.0) && i.contains(-1.0));
        assert!(!i.contains(1.0 + 1e-12));
        assert!(!Interval::new(0.0, Radius::Empty).contains(0.0));
    }

    #[test]
    fn score_is_nonnegative_and_zero_at_prediction() {
        let f = ScoreFunction::linear(2.0);
        assert_eq!(f.score(1.5, f.predict(1.5)), 0.0);
        assert!(f.score(1.5, -4.0) > 0.0);
    }

    #[test]
    fn radius_min_is_intersection() {
        assert_eq!(
            Radius::Finite(2.0).min(Radius::Infinite),
            Radius::Finite(2.0)
        );
        assert_eq!(Radius::Infinite.min(Radius::Infinite), Radius::Infinite);
        assert_eq!(Radius::Finite(2.0).min(Radius::Finite(1.0)), Radius::Finite(1.0));
        assert!(Radius::Finite(1e9) < Radius::Infinite);
    }

    #[test]
    fn level_validation() {
        assert!(Level::new(0.4).is_ok());
        assert!(Level::new(0.0).is_err());
        assert!(Level::new(1.0).is_err());
        assert!(Level::new(f64::NAN).is_err());
    }

    #[test]
    fn observation_rejects_non_finite() {
        assert!(Observation::new(f64::NAN, 0.0).is_err());
        assert!(Observation::new(0.0, f64::INFINITY).is_err());
    }
}
