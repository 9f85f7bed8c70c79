//! Decision-driven selection rules.
//!
//! A rule in force at time `t` may depend only on the decisions
//! `s_0..s_{t−1}`; it never sees past features, labels or offline data. The
//! [`RuleLedger`] records the realized rule at every time so that strategies
//! can re-evaluate it at arbitrary features.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parametric rule families. `count` below is `Σ_{i<t} s_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFamily {
    /// `x ↦ 1{x < τ1 + count/τ0}`.
    RunningCountThreshold,
    /// `x ↦ 1{x > τ1 + count/τ0}`.
    RisingCountThreshold,
    /// `x ↦ 1{count > τ1}`, independent of the feature.
    CountGate,
    /// `x ↦ 1{x > τ1 − min(count/τ0, 2)}`.
    ShiftedThreshold,
    ConstantOne,
    /// A user-supplied function of `(decisions, time, x)`.
    Custom,
}

type CustomFn = dyn Fn(&[bool], usize, f64) -> bool + Send + Sync;

#[derive(Clone)]
pub struct CustomRule(Arc<CustomFn>);

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomRule(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSpec {
    pub family: RuleFamily,
    #[serde(default = "default_tau0")]
    pub tau0: f64,
    #[serde(default)]
    pub tau1: f64,
    #[serde(skip)]
    custom: Option<CustomRule>,
}

fn default_tau0() -> f64 {
    1.0
}

impl PartialEq for RuleSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.tau0 == other.tau0
            && self.tau1 == other.tau1
            && match (&self.custom, &other.custom) {
                (None, None) => true,
                (Some(a), Some(b)) => Arc::ptr_eq(&a.0, &b.0),
                _ => false,
            }
    }
}

impl RuleSpec {
    pub fn new(family: RuleFamily, tau0: f64, tau1: f64) -> Result<Self> {
        let spec = Self {
            family,
            tau0,
            tau1,
            custom: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn running_count_threshold(tau0: f64, tau1: f64) -> Result<Self> {
        Self::new(RuleFamily::RunningCountThreshold, tau0, tau1)
    }

    pub fn rising_count_threshold(tau0: f64, tau1: f64) -> Result<Self> {
        Self::new(RuleFamily::RisingCountThreshold, tau0, tau1)
    }

    pub fn count_gate(tau1: f64) -> Result<Self> {
        Self::new(RuleFamily::CountGate, 1.0, tau1)
    }

    pub fn shifted_threshold(tau0: f64, tau1: f64) -> Result<Self> {
        Self::new(RuleFamily::ShiftedThreshold, tau0, tau1)
    }

    pub fn constant_one() -> Self {
        Self {
            family: RuleFamily::ConstantOne,
            tau0: 1.0,
            tau1: 0.0,
            custom: None,
        }
    }

    /// Registers a custom rule. The function receives the decision prefix,
    /// the current time and the feature being tested.
    ///
    /// A probe evaluates the function twice on a fixed grid and rejects it
    /// if the answers differ. This only catches impure rules; it cannot prove
    /// the rule is decision driven.
    pub fn custom<F>(f: F) -> Result<Self>
    where
        F: Fn(&[bool], usize, f64) -> bool + Send + Sync + 'static,
    {
        let rule = CustomRule(Arc::new(f));
        let histories: [&[bool]; 4] = [&[], &[true], &[false, true], &[true, true, false]];
        for h in histories {
            for k in 0..=20 {
                let x = -1.0 + 0.2 * f64::from(k);
                if (rule.0)(h, h.len(), x) != (rule.0)(h, h.len(), x) {
                    return Err(Error::Config(
                        "custom selection rule is not a pure function of (decisions, time, x)".into(),
                    ));
                }
            }
        }
        Ok(Self {
            family: RuleFamily::Custom,
            tau0: 1.0,
            tau1: 0.0,
            custom: Some(rule),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            RuleFamily::Custom if self.custom.is_none() => Err(Error::Config(
                "custom rules cannot be loaded from a config file; register them in code".into(),
            )),
            RuleFamily::RunningCountThreshold
            | RuleFamily::RisingCountThreshold
            | RuleFamily::ShiftedThreshold
                if !(self.tau0 > 0.0 && self.tau0.is_finite()) =>
            {
                Err(Error::Config(format!("tau0 must be positive, got {}", self.tau0)))
            }
            _ if self.tau1.is_nan() => Err(Error::Config("tau1 must not be NaN".into())),
            _ => Ok(()),
        }
    }

    /// True when the realized predicate ignores the feature.
    pub fn is_feature_independent(&self) -> bool {
        matches!(self.family, RuleFamily::CountGate | RuleFamily::ConstantOne)
    }
}

/// Rule assignment over time: `past` everywhere, except `terminal` at one
/// designated time (the two-branch construction used for selection rule A).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRule {
    pub past: RuleSpec,
    pub terminal: Option<(RuleSpec, usize)>,
}

impl SelectionRule {
    pub fn uniform(spec: RuleSpec) -> Self {
        Self {
            past: spec,
            terminal: None,
        }
    }

    pub fn composite(past: RuleSpec, terminal: RuleSpec, terminal_time: usize) -> Self {
        Self {
            past,
            terminal: Some((terminal, terminal_time)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.past.validate()?;
        if let Some((spec, _)) = &self.terminal {
            spec.validate()?;
        }
        Ok(())
    }

    fn spec_at(&self, time: usize) -> (&RuleSpec, bool) {
        match &self.terminal {
            Some((spec, at)) if *at == time => (spec, true),
            _ => (&self.past, false),
        }
    }

    /// Runs the decision stream over online features, producing the ledger
    /// of realized rules and decisions for times `0..features.len()`.
    pub fn run(&self, features: &[f64]) -> RuleLedger {
        let mut ledger = RuleLedger::new(self.clone());
        for &x in features {
            let rule = ledger.next_rule();
            let s = ledger.evaluate(&rule, x);
            ledger.record_decision(s);
        }
        ledger
    }
}

/// Append-only decision bits `s_0..s_{t−1}`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecisionHistory {
    bits: Vec<bool>,
    selected: u64,
}

impl DecisionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: bool) {
        self.bits.push(s);
        self.selected += u64::from(s);
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn selected_count(&self) -> u64 {
        self.selected
    }
}

impl From<Vec<bool>> for DecisionHistory {
    fn from(bits: Vec<bool>) -> Self {
        let selected = bits.iter().filter(|&&b| b).count() as u64;
        Self { bits, selected }
    }
}

/// The rule realized at one time, reduced to what it depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RealizedRule {
    pub time: usize,
    /// `Σ_{i<time} s_i`.
    pub count: u64,
    terminal: bool,
}

/// A standalone predicate `x ↦ {0, 1}` detached from any ledger.
#[derive(Debug, Clone)]
pub struct Predicate {
    spec: RuleSpec,
    count: u64,
    prefix: Arc<[bool]>,
}

impl Predicate {
    pub fn eval(&self, x: f64) -> bool {
        eval_spec(&self.spec, self.count, &self.prefix, x)
    }
}

#[inline]
fn eval_spec(spec: &RuleSpec, count: u64, prefix: &[bool], x: f64) -> bool {
    let c = count as f64;
    match spec.family {
        RuleFamily::RunningCountThreshold => x < spec.tau1 + c / spec.tau0,
        RuleFamily::RisingCountThreshold => x > spec.tau1 + c / spec.tau0,
        RuleFamily::CountGate => c > spec.tau1,
        RuleFamily::ShiftedThreshold => x > spec.tau1 - (c / spec.tau0).min(2.0),
        RuleFamily::ConstantOne => true,
        RuleFamily::Custom => {
            let f = spec.custom.as_ref().expect("validated custom rule");
            (f.0)(prefix, prefix.len(), x)
        }
    }
}

/// Realizes the predicate in force right after `history`.
pub fn realize_rule(spec: &RuleSpec, history: &DecisionHistory) -> Result<Predicate> {
    spec.validate()?;
    Ok(Predicate {
        spec: spec.clone(),
        count: history.selected_count(),
        prefix: history.bits().into(),
    })
}

/// Realized rules and decisions of one stream; entry `i` is the rule in
/// force at time `i`.
#[derive(Debug, Clone)]
pub struct RuleLedger {
    rule: SelectionRule,
    history: DecisionHistory,
    entries: Vec<RealizedRule>,
}

impl RuleLedger {
    pub fn new(rule: SelectionRule) -> Self {
        Self {
            rule,
            history: DecisionHistory::new(),
            entries: Vec::new(),
        }
    }

    pub fn rule(&self) -> &SelectionRule {
        &self.rule
    }

    pub fn history(&self) -> &DecisionHistory {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RealizedRule] {
        &self.entries
    }

    /// The rule for the current time `t = len()`, realized from `s_0..s_{t−1}`.
    pub fn next_rule(&self) -> RealizedRule {
        let time = self.entries.len();
        let (_, terminal) = self.rule.spec_at(time);
        RealizedRule {
            time,
            count: self.history.selected_count(),
            terminal,
        }
    }

    #[inline]
    pub fn evaluate(&self, rule: &RealizedRule, x: f64) -> bool {
        let spec = if rule.terminal {
            &self.rule.terminal.as_ref().expect("terminal rule").0
        } else {
            &self.rule.past
        };
        eval_spec(spec, rule.count, &self.history.bits()[..rule.time], x)
    }

    /// `S_i(x)` for a recorded time `i`.
    pub fn replay(&self, i: usize, x: f64) -> Result<bool> {
        let rule = self.entries.get(i).ok_or(Error::Index {
            index: i,
            len: self.entries.len(),
        })?;
        Ok(self.evaluate(rule, x))
    }

    /// Unchecked variant of [`replay`](Self::replay) for hot loops.
    #[inline]
    pub(crate) fn replay_at(&self, i: usize, x: f64) -> bool {
        self.evaluate(&self.entries[i], x)
    }

    /// Detached predicate for recorded time `i`, or for the current time when
    /// `i == len()`.
    pub fn predicate(&self, i: usize) -> Result<Predicate> {
        let rule = match i.cmp(&self.entries.len()) {
            std::cmp::Ordering::Less => self.entries[i],
            std::cmp::Ordering::Equal => self.next_rule(),
            std::cmp::Ordering::Greater => {
                return Err(Error::Index {
                    index: i,
                    len: self.entries.len(),
                })
            }
        };
        let spec = if rule.terminal {
            self.rule.terminal.as_ref().expect("terminal rule").0.clone()
        } else {
            self.rule.past.clone()
        };
        Ok(Predicate {
            spec,
            count: rule.count,
            prefix: self.history.bits()[..rule.time].into(),
        })
    }

    /// Appends the decision taken at the current time together with the
    /// rule that produced it.
    pub fn record_decision(&mut self, s: bool) {
        let rule = self.next_rule();
        self.entries.push(rule);
        self.history.push(s);
    }

    pub fn decision(&self, i: usize) -> bool {
        self.history.bits()[i]
    }

    /// The ledger as it stood at time `t` (first `t` entries).
    pub fn truncated(&self, t: usize) -> RuleLedger {
        let t = t.min(self.entries.len());
        RuleLedger {
            rule: self.rule.clone(),
            history: self.history.bits()[..t].to_vec().into(),
            entries: self.entries[..t].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(bits: &[u8]) -> DecisionHistory {
        bits.iter().map(|&b| b == 1).collect::<Vec<_>>().into()
    }

    #[test]
    fn rule_b_thresholds() {
        let spec = RuleSpec::running_count_threshold(200.0, 1.0).unwrap();
        let p = realize_rule(&spec, &DecisionHistory::new()).unwrap();
        assert!(p.eval(0.5));
        assert!(!p.eval(1.5));
        assert!(!p.eval(1.0));
    }

    #[test]
    fn count_gate_is_constant_once_open() {
        let spec = RuleSpec::count_gate(16.0).unwrap();
        let p = realize_rule(&spec, &hist(&[1; 17])).unwrap();
        assert!((0..=40).all(|k| p.eval(f64::from(k) * 0.05)));
        let closed = realize_rule(&spec, &hist(&[1; 16])).unwrap();
        assert!(!closed.eval(1.0));
    }

    #[test]
    fn shifted_threshold_saturates() {
        let tau0 = 5.0;
        let spec = RuleSpec::shifted_threshold(tau0, 2.0).unwrap();
        let p = realize_rule(&spec, &hist(&[1; 10])).unwrap();
        assert!(p.eval(1e-9));
        assert!(!p.eval(0.0));
        let q = realize_rule(&spec, &hist(&[1; 30])).unwrap();
        assert!(q.eval(1e-9) && !q.eval(-1e-9));
    }

    #[test]
    fn rising_threshold() {
        let spec = RuleSpec::rising_count_threshold(20.0, 0.0).unwrap();
        let p = realize_rule(&spec, &hist(&[1, 1, 0, 1])).unwrap();
        assert!(p.eval(0.151) && !p.eval(0.15));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(RuleSpec::running_count_threshold(0.0, 1.0).is_err());
        assert!(RuleSpec::shifted_threshold(-1.0, 1.0).is_err());
        let json = r#"{"family":"custom","tau0":1.0,"tau1":0.0}"#;
        let spec: RuleSpec = serde_json::from_str(json).unwrap();
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let unknown = serde_json::from_str::<RuleSpec>(r#"{"family":"oracle_peek"}"#);
        assert!(unknown.is_err());
    }

    #[test]
    fn custom_rule_sees_only_decisions() {
        let spec = RuleSpec::custom(|h, t, x| {
            assert_eq!(h.len(), t);
            x > h.iter().filter(|&&b| b).count() as f64
        })
        .unwrap();
        let ledger = SelectionRule::uniform(spec).run(&[0.5, 0.5, 1.5]);
        assert_eq!(ledger.history().bits(), &[true, false, true]);
    }

    #[test]
    fn replay_constant_one() {
        let ledger = SelectionRule::uniform(RuleSpec::constant_one()).run(&[0.1, 1.9]);
        assert!(ledger.replay(0, 123.0).unwrap());
        assert!(ledger.replay(1, -5.0).unwrap());
        assert!(matches!(ledger.replay(2, 0.0), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn replay_rule_b_with_no_prior_selection() {
        let spec = RuleSpec::running_count_threshold(200.0, 1.0).unwrap();
        let ledger = SelectionRule::uniform(spec).run(&[1.5, 1.7, 1.2]);
        assert_eq!(ledger.history().selected_count(), 0);
        assert!(ledger.replay(2, 0.99).unwrap());
        assert!(!ledger.replay(2, 1.0).unwrap());
    }

    #[test]
    fn replay_matches_recorded_decisions() {
        let spec = RuleSpec::running_count_threshold(2.0, 0.3).unwrap();
        let xs = [0.1, 0.9, 0.2, 1.4, 0.7, 1.1, 0.05, 1.9];
        let ledger = SelectionRule::uniform(spec).run(&xs);
        for (i, &x) in xs.iter().enumerate() {
            assert_eq!(ledger.replay(i, x).unwrap(), ledger.decision(i));
        }
    }

    #[test]
    fn record_decision_grows_both() {
        let mut ledger = RuleLedger::new(SelectionRule::uniform(RuleSpec::constant_one()));
        ledger.record_decision(true);
        assert_eq!(ledger.history().bits(), &[true]);
        let mut ledger2 = RuleLedger::new(SelectionRule::uniform(RuleSpec::constant_one()));
        for s in [true, false, false] {
            ledger2.record_decision(s);
            assert_eq!(ledger2.len(), ledger2.history().len());
        }
        assert_eq!(ledger2.history().bits(), &[true, false, false]);
    }

    #[test]
    fn composite_switches_at_terminal_time() {
        let rule = SelectionRule::composite(
            RuleSpec::rising_count_threshold(20.0, 0.0).unwrap(),
            RuleSpec::count_gate(1.0).unwrap(),
            3,
        );
        let ledger = rule.run(&[1.0, 1.0, 1.0, 0.0]);
        // gate opens with 3 > 1 prior selections even though x = 0
        assert_eq!(ledger.history().bits(), &[true, true, true, true]);
    }

    #[test]
    fn predicate_for_current_time() {
        let ledger = SelectionRule::uniform(RuleSpec::count_gate(0.0).unwrap()).run(&[]);
        assert!(!ledger.predicate(0).unwrap().eval(1.0));
        assert!(ledger.predicate(1).is_err());
    }
}
