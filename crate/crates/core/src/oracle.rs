//! Brute-force checks of the symmetry condition on small instances.
//!
//! A calibration strategy satisfies symmetry if permuting the data inside the
//! augmented calibration set `D̃_t = D_t ∪ {t}` (identity elsewhere) and
//! re-running the whole procedure on the permuted stream, including the
//! regeneration of its decision-driven rules, returns the same augmented set.
//! [`check_symmetry`] enumerates every permutation; [`search_witness`] draws
//! random small instances until one fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::conformal::Level;
use crate::engine::{run_methods, EngineSettings, Protocol};
use crate::error::{Error, Result};
use crate::selection::{RealizedRule, RuleFamily, RuleLedger, RuleSpec, SelectionRule};
use crate::sim::{generate_dataset, replicate_rng, DataGenConfig, RuleConfig};
use crate::strategies::{select_calibration, Features, StrategyKind};

/// Largest augmented set accepted for exhaustive enumeration (8! orderings).
pub const MAX_AUGMENTED: usize = 8;

/// One-sided 3σ normal tail.
pub const THREE_SIGMA: f64 = 0.00135;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridTag {
    Hybrid,
}

/// Strategies the oracle can check. `Hybrid` filters offline candidates by
/// the test rule only and online candidates like EXPRESS; it exists only
/// here, as a search target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SearchStrategy {
    Standard(StrategyKind),
    Hybrid { kind: HybridTag },
}

impl SearchStrategy {
    pub const HYBRID: SearchStrategy = SearchStrategy::Hybrid {
        kind: HybridTag::Hybrid,
    };

    pub fn label(&self) -> String {
        match self {
            SearchStrategy::Standard(k) => k.label(),
            SearchStrategy::Hybrid { .. } => "HYBRID".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SearchStrategy::Standard(StrategyKind::ExpressM { .. }) => Err(Error::Config(
                "EXPRESS-M merges two calibration sets and has no single augmented set".into(),
            )),
            SearchStrategy::Standard(k) => k.validate(),
            SearchStrategy::Hybrid { .. } => Ok(()),
        }
    }
}

impl From<StrategyKind> for SearchStrategy {
    fn from(k: StrategyKind) -> Self {
        SearchStrategy::Standard(k)
    }
}

/// Features `X_{−n}..X_{−1}` and `X_0..X_t`; the last online value is the
/// test feature. Labels play no part in which indices are selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallInstance {
    pub offline_x: Vec<f64>,
    pub online_x: Vec<f64>,
    pub rule: RuleConfig,
    pub strategy: SearchStrategy,
}

impl SmallInstance {
    pub fn t(&self) -> usize {
        self.online_x.len() - 1
    }

    fn feature(&self, j: i64) -> f64 {
        if j < 0 {
            self.offline_x[(self.offline_x.len() as i64 + j) as usize]
        } else {
            self.online_x[j as usize]
        }
    }

    fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.online_x.is_empty() {
            return Err(Error::Config("instance needs at least the test feature".into()));
        }
        let size = self.offline_x.len() + self.online_x.len();
        if size > MAX_AUGMENTED {
            return Err(Error::TooLarge {
                size,
                bound: MAX_AUGMENTED,
            });
        }
        Ok(())
    }

    fn with_features(&self, offline_x: Vec<f64>, online_x: Vec<f64>) -> Self {
        Self {
            offline_x,
            online_x,
            ..self.clone()
        }
    }
}

/// `D̃_t` when the test point is selected, otherwise `None`.
pub fn augmented_set(inst: &SmallInstance) -> Result<Option<Vec<i64>>> {
    inst.validate()?;
    let t = inst.t();
    let rule = inst.rule.build(inst.online_x.len());
    rule.validate()?;
    let ledger = rule.run(&inst.online_x[..t]);
    let test_rule = ledger.next_rule();
    let x_t = inst.online_x[t];
    if !ledger.evaluate(&test_rule, x_t) {
        return Ok(None);
    }
    let features = Features::new(&inst.offline_x, &inst.online_x[..t]);
    let mut set = match inst.strategy {
        SearchStrategy::Standard(kind) => {
            select_calibration(&kind, t, x_t, &features, &ledger, &test_rule)?.augmented()
        }
        SearchStrategy::Hybrid { .. } => hybrid(t, x_t, &features, &ledger, &test_rule),
    };
    set.sort_unstable();
    Ok(Some(set))
}

fn hybrid(
    t: usize,
    x_t: f64,
    features: &Features<'_>,
    ledger: &RuleLedger,
    test_rule: &RealizedRule,
) -> Vec<i64> {
    let n = features.n_offline() as i64;
    (-n..t as i64)
        .filter(|&j| {
            let xj = features.get(j);
            ledger.evaluate(test_rule, xj)
                && (j < 0 || (0..t).all(|i| ledger.replay_at(i, xj) == ledger.replay_at(i, x_t)))
        })
        .chain(std::iter::once(t as i64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryWitness {
    pub instance: SmallInstance,
    /// `D̃_t` of the original stream, ascending.
    pub augmented: Vec<i64>,
    /// `π(augmented[k])` for every `k`.
    pub permutation: Vec<i64>,
    /// Augmented set of the permuted stream; empty when its test point is
    /// not selected.
    pub permuted: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymmetryOutcome {
    Pass { permutations: u64 },
    Violated(Box<SymmetryWitness>),
}

impl SymmetryOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, SymmetryOutcome::Pass { .. })
    }

    pub fn witness(&self) -> Option<&SymmetryWitness> {
        match self {
            SymmetryOutcome::Violated(w) => Some(w),
            SymmetryOutcome::Pass { .. } => None,
        }
    }
}

/// Applies the extended permutation: position `augmented[k]` receives the
/// feature at `image[k]`.
fn permuted_instance(inst: &SmallInstance, augmented: &[i64], image: &[i64]) -> SmallInstance {
    let mut off = inst.offline_x.clone();
    let mut on = inst.online_x.clone();
    let n = off.len() as i64;
    for (&pos, &src) in augmented.iter().zip(image) {
        let x = inst.feature(src);
        if pos < 0 {
            off[(n + pos) as usize] = x;
        } else {
            on[pos as usize] = x;
        }
    }
    inst.with_features(off, on)
}

/// Checks every permutation of `D̃_t` in lexicographic order of images and
/// returns the first violation.
pub fn check_symmetry(inst: &SmallInstance) -> Result<SymmetryOutcome> {
    let augmented = augmented_set(inst)?.ok_or_else(|| {
        Error::Contract("symmetry is only defined when the test point is selected".into())
    })?;
    let mut image = augmented.clone();
    let mut count = 0u64;
    loop {
        count += 1;
        let permuted = permuted_instance(inst, &augmented, &image);
        let got = augmented_set(&permuted)?.unwrap_or_default();
        if got != augmented {
            return Ok(SymmetryOutcome::Violated(Box::new(SymmetryWitness {
                instance: inst.clone(),
                augmented,
                permutation: image,
                permuted: got,
            })));
        }
        if !next_permutation(&mut image) {
            return Ok(SymmetryOutcome::Pass {
                permutations: count,
            });
        }
    }
}

fn next_permutation(v: &mut [i64]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|&x| x > v[i]).expect("pivot has a successor");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Size limits for randomly drawn instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceBounds {
    pub max_offline: usize,
    pub max_t: usize,
}

impl Default for InstanceBounds {
    fn default() -> Self {
        Self {
            max_offline: 3,
            max_t: 4,
        }
    }
}

fn jitter(spec: &RuleSpec, rng: &mut ChaCha8Rng) -> RuleSpec {
    match spec.family {
        RuleFamily::ConstantOne | RuleFamily::Custom => spec.clone(),
        family => {
            let tau0 = spec.tau0 * rng.random_range(0.5..2.0);
            let tau1 = spec.tau1 + rng.random_range(-0.5..0.5);
            RuleSpec::new(family, tau0, tau1).unwrap_or_else(|_| spec.clone())
        }
    }
}

/// Draws one instance with `Unif[0, 2]` features and jittered rule
/// parameters. The test point is not guaranteed to be selected.
pub fn random_instance(
    strategy: SearchStrategy,
    rule: &RuleConfig,
    bounds: InstanceBounds,
    rng: &mut ChaCha8Rng,
) -> SmallInstance {
    let n_off = rng.random_range(0..=bounds.max_offline);
    let t = rng.random_range(0..=bounds.max_t);
    let mut draw = |k: usize| (0..k).map(|_| 2.0 * rng.random::<f64>()).collect::<Vec<_>>();
    let offline_x = draw(n_off);
    let online_x = draw(t + 1);
    let rule = match rule {
        RuleConfig::Uniform(s) => RuleConfig::Uniform(jitter(s, rng)),
        RuleConfig::Composite { past, terminal, .. } => RuleConfig::Composite {
            past: jitter(past, rng),
            terminal: jitter(terminal, rng),
            terminal_time: None,
        },
    };
    SmallInstance {
        offline_x,
        online_x,
        rule,
        strategy,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub witness: Option<SymmetryWitness>,
    /// Instances drawn, including those whose test point was not selected.
    pub trials: u64,
    /// Instances that were actually checked.
    pub checked: u64,
}

/// Draws up to `trials` instances and stops at the first violation.
pub fn search_witness(
    strategy: SearchStrategy,
    rule: &RuleConfig,
    trials: u64,
    seed: u64,
    bounds: InstanceBounds,
) -> Result<SearchReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    strategy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for trial in 1..=trials {
        let inst = random_instance(strategy, rule, bounds, &mut rng);
        if augmented_set(&inst)?.is_none() {
            continue;
        }
        checked += 1;
        if let SymmetryOutcome::Violated(w) = check_symmetry(&inst)? {
            return Ok(SearchReport {
                witness: Some(*w),
                trials: trial,
                checked,
            });
        }
    }
    Ok(SearchReport {
        witness: None,
        trials,
        checked,
    })
}

/// Monte Carlo setup for the rank test: the conformal p-value count
/// `1 + #{j ∈ D_t : R_j ≥ R_t}` is uniform on `1..=|D̃_t|` given `|D̃_t|`
/// when the augmented data are exchangeable.
#[derive(Debug, Clone)]
pub struct ExchangeabilityCheck {
    pub data: DataGenConfig,
    pub rule: SelectionRule,
    pub strategy: StrategyKind,
    /// Time at which the rank is recorded.
    pub time: usize,
    pub replicates: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeabilityReport {
    pub statistic: f64,
    pub df: u64,
    pub p_value: f64,
    /// Replicates that reported an interval at the checked time.
    pub matched: u64,
    /// Matched replicates in calibration-size groups large enough to test.
    pub used: u64,
}

impl ExchangeabilityReport {
    pub fn inconclusive(&self) -> bool {
        self.df == 0
    }

    pub fn rejected(&self) -> bool {
        !self.inconclusive() && self.p_value < THREE_SIGMA
    }

    pub fn uniform(&self) -> bool {
        !self.inconclusive() && !self.rejected()
    }
}

/// Pearson chi-square of the p-value count against the uniform law, summed
/// over augmented-set sizes with at least five expected hits per cell.
pub fn check_conditional_exchangeability(check: &ExchangeabilityCheck) -> Result<ExchangeabilityReport> {
    if let StrategyKind::ExpressM { .. } = check.strategy {
        return Err(Error::Config("EXPRESS-M has no single conformal p-value".into()));
    }
    if check.time >= check.data.n_on {
        return Err(Error::Config("checked time lies outside the online horizon".into()));
    }
    let settings = EngineSettings::new(Level::new(0.5)?).with_protocol(Protocol::EverySelected);
    let score_fn = crate::conformal::ScoreFunction::linear(check.data.beta);
    let methods = [check.strategy.into()];
    // counts[size][rank - 1]
    let mut counts: Vec<Vec<u64>> = Vec::new();
    let mut matched = 0;
    for r in 0..check.replicates {
        let stream = generate_dataset(&check.data, &mut replicate_rng(check.seed, r));
        let traj = run_methods(&stream, &check.rule, &methods, settings, &score_fn)?.remove(0);
        if let Some(p) = traj.records[check.time].p_value {
            matched += 1;
            if counts.len() <= p.total {
                counts.resize(p.total + 1, Vec::new());
            }
            let row = &mut counts[p.total];
            row.resize(p.total, 0);
            row[p.count - 1] += 1;
        }
    }
    let (mut statistic, mut df, mut used) = (0.0, 0u64, 0u64);
    for (size, row) in counts.iter().enumerate() {
        let n: u64 = row.iter().sum();
        if size < 2 || n < 5 * size as u64 {
            continue;
        }
        let expected = n as f64 / size as f64;
        statistic += row.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum::<f64>();
        df += size as u64 - 1;
        used += n;
    }
    let p_value = if df == 0 {
        f64::NAN
    } else {
        let chi = ChiSquared::new(df as f64).map_err(|e| Error::Domain(e.to_string()))?;
        chi.sf(statistic)
    };
    Ok(ExchangeabilityReport {
        statistic,
        df,
        p_value,
        matched,
        used,
    })
}
