//! FCP, FCR and pFCR accounting plus interval statistics.
//!
//! Everything is accumulated as integer counts so that merging partial
//! accumulators in any grouping gives the same totals. FCP values are
//! grouped by their denominator: the replicate sum `Σ FCP` at time `T` is
//! `Σ_N M_N / N` where `M_N` adds up the miss counts of all replicates with
//! `N` reported intervals up to `T`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};

use crate::baselines::{aci_fcp_bound, lord_invariant_holds, AciClip};
use crate::engine::{BaselineConfig, Method, StepRecord, Trajectory};

/// Buckets with fewer matching replicates are reported but not judged.
pub const MIN_BUCKET: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Standard error of the mean; absent with fewer than two observations.
    pub stderr: Option<f64>,
    /// Number of observations behind the estimate.
    pub n: u64,
}

impl Estimate {
    fn from_sums(sum: f64, sumsq: f64, n: u64) -> Option<Self> {
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let stderr = (n >= 2).then(|| {
            let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        });
        Some(Self {
            value: mean,
            stderr,
            n,
        })
    }

    fn proportion(hits: u64, n: u64) -> Option<Self> {
        Self::from_sums(hits as f64, hits as f64, n)
    }

    /// `value ≤ bound + z·stderr` (a missing stderr counts as zero).
    pub fn at_most(&self, bound: f64, z: f64) -> bool {
        self.value <= bound + z * self.stderr.unwrap_or(0.0)
    }

    /// `|value − target| > z·stderr`.
    pub fn deviates(&self, target: f64, z: f64) -> bool {
        (self.value - target).abs() > z * self.stderr.unwrap_or(0.0)
    }
}

/// `FCP(T) = Σ_{t≤T} S_t 1{Y_t ∉ Ĉ_t} / (1 ∨ Σ_{t≤T} S_t)`, counting the
/// intervals actually reported.
pub fn fcp(traj: &Trajectory, t: usize) -> Ratio<u64> {
    let (misses, reported) = fcp_counts(&traj.records[..=t]);
    Ratio::new(misses, reported.max(1))
}

fn fcp_counts(records: &[StepRecord]) -> (u64, u64) {
    records.iter().fold((0, 0), |(m, n), r| {
        (m + u64::from(r.miscovered()), n + u64::from(r.reported()))
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
struct TimeCell {
    /// Reported count `N ≥ 1` → (Σ misses, Σ misses²).
    fcp: BTreeMap<u32, (u64, u128)>,
    no_reports: u64,
    selected: u64,
    reported: u64,
    miscovered: u64,
    infinite: u64,
    calib_sum: u64,
    calib_sumsq: u128,
    finite_lengths: Vec<f64>,
}

impl TimeCell {
    fn merge(&mut self, other: TimeCell) {
        for (n, (m, m2)) in other.fcp {
            let e = self.fcp.entry(n).or_default();
            e.0 += m;
            e.1 += m2;
        }
        self.no_reports += other.no_reports;
        self.selected += other.selected;
        self.reported += other.reported;
        self.miscovered += other.miscovered;
        self.infinite += other.infinite;
        self.calib_sum += other.calib_sum;
        self.calib_sumsq += other.calib_sumsq;
        self.finite_lengths.extend(other.finite_lengths);
    }
}

/// Selection-conditional miscoverage for one decision prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketReport {
    pub count: u64,
    pub misses: u64,
    pub estimate: Option<Estimate>,
}

impl BucketReport {
    pub fn eligible(&self) -> bool {
        self.count >= MIN_BUCKET
    }
}

/// Per-time aggregates for one method over any number of replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodAccumulator {
    pub label: String,
    n_reps: u64,
    cells: Vec<TimeCell>,
    prefix_time: Option<usize>,
    /// Decision prefix `s_0..s_{t−1}` (bit `i` = `s_i`) → (reported, missed).
    buckets: BTreeMap<u64, (u64, u64)>,
    checks: u64,
    check_failures: u64,
}

impl MethodAccumulator {
    pub fn new(label: impl Into<String>, horizon: usize) -> Self {
        Self {
            label: label.into(),
            n_reps: 0,
            cells: vec![TimeCell::default(); horizon],
            prefix_time: None,
            buckets: BTreeMap::new(),
            checks: 0,
            check_failures: 0,
        }
    }

    /// Also tracks miscoverage at time `t` keyed by the decision prefix.
    /// Prefixes longer than 64 decisions are not supported.
    pub fn with_prefix_buckets(mut self, t: usize) -> Self {
        assert!(t <= 64, "decision prefix buckets need t <= 64");
        self.prefix_time = Some(t);
        self
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let horizon = trajs.first().map_or(0, |t| t.records.len());
        let label = trajs.first().map_or_else(String::new, |t| t.label.clone());
        let mut acc = Self::new(label, horizon);
        for t in trajs {
            acc.push(t);
        }
        acc
    }

    pub fn replicates(&self) -> u64 {
        self.n_reps
    }

    pub fn horizon(&self) -> usize {
        self.cells.len()
    }

    pub fn push(&mut self, traj: &Trajectory) {
        assert_eq!(traj.records.len(), self.cells.len(), "trajectory horizon mismatch");
        self.n_reps += 1;
        let (mut misses, mut reported) = (0u64, 0u64);
        for (cell, r) in self.cells.iter_mut().zip(&traj.records) {
            cell.selected += u64::from(r.selected);
            if let Some(iv) = r.interval {
                reported += 1;
                cell.reported += 1;
                cell.calib_sum += r.calib_size as u64;
                cell.calib_sumsq += (r.calib_size as u128).pow(2);
                if iv.radius.is_infinite() {
                    cell.infinite += 1;
                } else {
                    cell.finite_lengths.push(iv.length());
                }
                if r.miscovered() {
                    misses += 1;
                    cell.miscovered += 1;
                }
            }
            if reported == 0 {
                cell.no_reports += 1;
            } else {
                let e = cell.fcp.entry(reported as u32).or_default();
                e.0 += misses;
                e.1 += u128::from(misses).pow(2);
            }
        }
        if let Some(t) = self.prefix_time {
            if let Some(r) = traj.records.get(t).filter(|r| r.reported()) {
                let key = traj.records[..t]
                    .iter()
                    .enumerate()
                    .fold(0u64, |k, (i, r)| k | (u64::from(r.selected) << i));
                let e = self.buckets.entry(key).or_default();
                e.0 += 1;
                e.1 += u64::from(r.miscovered());
            }
        }
    }

    /// Records the outcome of a per-trajectory invariant check.
    pub fn record_check(&mut self, ok: bool) {
        self.checks += 1;
        self.check_failures += u64::from(!ok);
    }

    /// (checks run, checks failed).
    pub fn checks(&self) -> (u64, u64) {
        (self.checks, self.check_failures)
    }

    pub fn merge(&mut self, other: MethodAccumulator) {
        assert_eq!(self.cells.len(), other.cells.len(), "horizon mismatch");
        self.n_reps += other.n_reps;
        for (a, b) in self.cells.iter_mut().zip(other.cells) {
            a.merge(b);
        }
        for (k, (n, m)) in other.buckets {
            let e = self.buckets.entry(k).or_default();
            e.0 += n;
            e.1 += m;
        }
        self.checks += other.checks;
        self.check_failures += other.check_failures;
    }

    fn fcp_sums(&self, t: usize) -> (f64, f64) {
        self.cells[t].fcp.iter().fold((0.0, 0.0), |(s, s2), (&n, &(m, m2))| {
            let n = f64::from(n);
            (s + m as f64 / n, s2 + m2 as f64 / (n * n))
        })
    }

    /// Mean FCP(T) over all replicates.
    pub fn fcr(&self, t: usize) -> Option<Estimate> {
        let (s, s2) = self.fcp_sums(t);
        Estimate::from_sums(s, s2, self.n_reps)
    }

    /// Mean FCP(T) over replicates with at least one reported interval.
    pub fn pfcr(&self, t: usize) -> Option<Estimate> {
        let (s, s2) = self.fcp_sums(t);
        Estimate::from_sums(s, s2, self.n_reps - self.cells[t].no_reports)
    }

    pub fn fcr_exact(&self, t: usize) -> BigRational {
        self.fcp_sum_exact(t) / BigInt::from(self.n_reps.max(1))
    }

    pub fn pfcr_exact(&self, t: usize) -> Option<BigRational> {
        let pos = self.n_reps - self.cells[t].no_reports;
        (pos > 0).then(|| self.fcp_sum_exact(t) / BigInt::from(pos))
    }

    /// `P̂(Σ_{i≤T} S_i > 0)`.
    pub fn positive_fraction_exact(&self, t: usize) -> BigRational {
        BigRational::new(
            BigInt::from(self.n_reps - self.cells[t].no_reports),
            BigInt::from(self.n_reps.max(1)),
        )
    }

    fn fcp_sum_exact(&self, t: usize) -> BigRational {
        self.cells[t]
            .fcp
            .iter()
            .fold(BigRational::zero(), |acc, (&n, &(m, _))| {
                acc + BigRational::new(BigInt::from(m), BigInt::from(n))
            })
    }

    /// Miscoverage among intervals reported at `t`.
    pub fn miscoverage(&self, t: usize) -> Option<Estimate> {
        let c = &self.cells[t];
        Estimate::proportion(c.miscovered, c.reported)
    }

    pub fn selection_rate(&self, t: usize) -> Option<Estimate> {
        Estimate::proportion(self.cells[t].selected, self.n_reps)
    }

    pub fn infinite_fraction(&self, t: usize) -> Option<Estimate> {
        let c = &self.cells[t];
        Estimate::proportion(c.infinite, c.reported)
    }

    pub fn mean_calib_size(&self, t: usize) -> Option<Estimate> {
        let c = &self.cells[t];
        Estimate::from_sums(c.calib_sum as f64, c.calib_sumsq as f64, c.reported)
    }

    /// Median length over the finite intervals reported at `t`.
    pub fn median_length(&self, t: usize) -> Option<f64> {
        median(&self.cells[t].finite_lengths)
    }

    pub fn reported(&self, t: usize) -> u64 {
        self.cells[t].reported
    }

    /// Buckets by decision prefix, in ascending key order.
    pub fn buckets(&self) -> impl Iterator<Item = (u64, BucketReport)> + '_ {
        self.buckets.iter().map(|(&k, &(n, m))| {
            (
                k,
                BucketReport {
                    count: n,
                    misses: m,
                    estimate: Estimate::proportion(m, n),
                },
            )
        })
    }

    /// All per-time metric rows in output order.
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for t in 0..self.cells.len() {
            let mut push = |metric: &'static str, e: Option<Estimate>| {
                if let Some(e) = e {
                    rows.push(MetricRow {
                        t,
                        metric,
                        value: e.value,
                        stderr: e.stderr,
                        n: e.n,
                    });
                }
            };
            push("fcr", self.fcr(t));
            push("pfcr", self.pfcr(t));
            push("miscoverage", self.miscoverage(t));
            push(
                "median_length",
                self.median_length(t).map(|value| Estimate {
                    value,
                    stderr: None,
                    n: self.cells[t].finite_lengths.len() as u64,
                }),
            );
            push("infinite_fraction", self.infinite_fraction(t));
            push("mean_calib_size", self.mean_calib_size(t));
            push("selection_rate", self.selection_rate(t));
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub t: usize,
    pub metric: &'static str,
    pub value: f64,
    pub stderr: Option<f64>,
    pub n: u64,
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    })
}

pub fn fcr_estimate(trajs: &[Trajectory], t: usize) -> Option<Estimate> {
    MethodAccumulator::from_trajectories(trajs).fcr(t)
}

/// `None` when no replicate reported an interval up to `t`.
pub fn pfcr_estimate(trajs: &[Trajectory], t: usize) -> Option<Estimate> {
    MethodAccumulator::from_trajectories(trajs).pfcr(t)
}

/// Miscoverage at `t` among replicates whose decisions before `t` equal
/// `prefix` and that reported an interval at `t`.
pub fn conditional_miscoverage(trajs: &[Trajectory], t: usize, prefix: &[bool]) -> BucketReport {
    assert_eq!(prefix.len(), t, "prefix must cover times 0..t");
    let (mut count, mut misses) = (0, 0);
    for tr in trajs {
        let r = &tr.records[t];
        if r.reported() && tr.decisions()[..t] == *prefix {
            count += 1;
            misses += u64::from(r.miscovered());
        }
    }
    BucketReport {
        count,
        misses,
        estimate: Estimate::proportion(misses, count),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStats {
    pub median_length: Option<f64>,
    pub infinite_fraction: Option<f64>,
    pub mean_calib_size: Option<f64>,
}

pub fn interval_stats(trajs: &[Trajectory], t: usize) -> IntervalStats {
    let acc = MethodAccumulator::from_trajectories(trajs);
    IntervalStats {
        median_length: acc.median_length(t),
        infinite_fraction: acc.infinite_fraction(t).map(|e| e.value),
        mean_calib_size: acc.mean_calib_size(t).map(|e| e.value),
    }
}

/// Per-trajectory guarantee of a baseline, if it has one that can be checked
/// exactly: the LORD-CI spending invariant at every prefix, or the ACI bound
/// `|FCP(T) − α| ≤ (max{α, 1−α} + γ)/(N_T γ)` at every `T` with `N_T > 0`.
pub fn trajectory_check(method: &Method, traj: &Trajectory, alpha: f64) -> Option<bool> {
    match method {
        Method::Baseline(BaselineConfig::Lord(_)) => Some(lord_invariant_holds(
            &traj.levels(),
            traj.decisions(),
            alpha,
        )),
        Method::Baseline(BaselineConfig::Aci(c)) if c.clip == AciClip::None => {
            let (mut misses, mut n) = (0u64, 0u64);
            Some(traj.records.iter().all(|r| {
                if r.reported() {
                    n += 1;
                    misses += u64::from(r.miscovered());
                }
                n == 0 || {
                    let fcp = misses as f64 / n as f64;
                    (fcp - alpha).abs() <= aci_fcp_bound(alpha, c.gamma_step, n) + 1e-9
                }
            }))
        }
        _ => None,
    }
}

/// `fcr = pfcr · P̂(Σ S > 0)` as an exact rational identity.
pub fn prop1_identity_holds(acc: &MethodAccumulator, t: usize) -> bool {
    let rhs = acc
        .pfcr_exact(t)
        .map_or_else(BigRational::zero, |p| p * acc.positive_fraction_exact(t));
    acc.fcr_exact(t) == rhs
}

/// Lossy conversion of an exact rational.
pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
