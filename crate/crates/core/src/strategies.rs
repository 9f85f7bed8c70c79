//! Calibration selection strategies.
//!
//! Indices follow the stream convention: offline points are `−n..=−1`, online
//! points `0..t−1`, and `t` is the selected test point. Every strategy maps
//! the realized rule ledger plus candidate features to a subset of
//! `J_t = {−n..−1} ∪ {0..t−1}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{RealizedRule, RuleLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Full,
    SFull,
    SFix,
    Ada,
    Express,
    KExpress {
        k: usize,
    },
    /// S-FIX and EXPRESS merged by intersection with a `1/√T` level split.
    /// `horizon_t` defaults to the online horizon when omitted.
    ExpressM {
        #[serde(default)]
        horizon_t: Option<usize>,
    },
}

impl StrategyKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategyKind::KExpress { k: 0 } => {
                Err(Error::Config("k_express requires k >= 1".into()))
            }
            StrategyKind::ExpressM {
                horizon_t: Some(h),
            } if h < 2 => Err(Error::Config(format!(
                "express_m requires horizon_t >= 2 so both sub-levels lie in (0, 1), got {h}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            StrategyKind::Full => "FULL".into(),
            StrategyKind::SFull => "S-FULL".into(),
            StrategyKind::SFix => "S-FIX".into(),
            StrategyKind::Ada => "ADA".into(),
            StrategyKind::Express => "EXPRESS".into(),
            StrategyKind::KExpress { k } => format!("{k}-EXPRESS"),
            StrategyKind::ExpressM { .. } => "EXPRESS-M".into(),
        }
    }

    /// Strategies for which the augmented calibration set is invariant under
    /// permutations of itself.
    pub fn is_symmetric(&self) -> bool {
        matches!(
            self,
            StrategyKind::SFix | StrategyKind::Express | StrategyKind::KExpress { .. }
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Features of all candidate calibration points, addressed by stream index.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub offline: &'a [f64],
    /// Online features `X_0..X_{t−1}` (longer slices are allowed; only the
    /// first `t` entries are read).
    pub online: &'a [f64],
}

impl<'a> Features<'a> {
    pub fn new(offline: &'a [f64], online: &'a [f64]) -> Self {
        Self { offline, online }
    }

    pub fn n_offline(&self) -> usize {
        self.offline.len()
    }

    #[inline]
    pub fn get(&self, index: i64) -> f64 {
        if index < 0 {
            self.offline[(self.offline.len() as i64 + index) as usize]
        } else {
            self.online[index as usize]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationSet {
    pub t: usize,
    /// Sorted ascending.
    pub indices: Vec<i64>,
}

impl CalibrationSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `D̃_t = D_t ∪ {t}`; only meaningful when the test point was selected.
    pub fn augmented(&self) -> Vec<i64> {
        let mut v = self.indices.clone();
        v.push(self.t as i64);
        v
    }
}

/// `J_t`, or `J_off ∪ {max(0, t−k)..t−1}` for K-EXPRESS.
pub fn candidate_window(kind: &StrategyKind, t: usize, n_offline: usize) -> Vec<i64> {
    let start = match *kind {
        StrategyKind::KExpress { k } => t.saturating_sub(k),
        _ => 0,
    };
    (-(n_offline as i64)..0)
        .chain(start as i64..t as i64)
        .collect()
}

/// Calibration indices chosen by `kind` for the selected test point `x_t`.
///
/// `ledger` must cover times `0..t−1` and `test_rule` is the rule in force at
/// `t`. Fails with a contract violation if `test_rule(x_t) = 0`.
pub fn select_calibration(
    kind: &StrategyKind,
    t: usize,
    x_t: f64,
    features: &Features<'_>,
    ledger: &RuleLedger,
    test_rule: &RealizedRule,
) -> Result<CalibrationSet> {
    kind.validate()?;
    if ledger.len() != t || test_rule.time != t {
        return Err(Error::Contract(format!(
            "ledger covers {} steps and test rule is for time {}, expected {t}",
            ledger.len(),
            test_rule.time
        )));
    }
    if features.online.len() < t {
        return Err(Error::Contract(format!(
            "{} online features supplied, need {t}",
            features.online.len()
        )));
    }
    if !ledger.evaluate(test_rule, x_t) {
        return Err(Error::Contract(format!(
            "calibration requested at t = {t} but the test point was not selected"
        )));
    }
    let selects = |j: i64| ledger.evaluate(test_rule, features.get(j));
    let agrees_on = |j: i64, times: std::ops::Range<usize>| {
        let xj = features.get(j);
        times
            .into_iter()
            .all(|i| ledger.replay_at(i, xj) == ledger.replay_at(i, x_t))
    };
    let window = candidate_window(kind, t, features.n_offline());
    let indices = match *kind {
        StrategyKind::Full => window,
        StrategyKind::SFull => window.into_iter().filter(|&j| selects(j)).collect(),
        StrategyKind::SFix => window
            .into_iter()
            .filter(|&j| j < 0 && selects(j))
            .collect(),
        StrategyKind::Ada => window
            .into_iter()
            .filter(|&j| {
                selects(j)
                    && (j < 0 || ledger.decision(j as usize) == ledger.replay_at(j as usize, x_t))
            })
            .collect(),
        StrategyKind::Express => window
            .into_iter()
            .filter(|&j| selects(j) && agrees_on(j, 0..t))
            .collect(),
        StrategyKind::KExpress { k } => {
            let start = t.saturating_sub(k);
            window
                .into_iter()
                .filter(|&j| selects(j) && agrees_on(j, start..t))
                .collect()
        }
        StrategyKind::ExpressM { .. } => {
            return Err(Error::Contract(
                "EXPRESS-M merges two calibration sets; use the engine".into(),
            ))
        }
    };
    Ok(CalibrationSet { t, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{RuleSpec, SelectionRule};

    fn setup(
        spec: RuleSpec,
        _offline: &[f64],
        online: &[f64],
    ) -> (RuleLedger, RealizedRule) {
        let ledger = SelectionRule::uniform(spec).run(online);
        let rule = ledger.next_rule();
        (ledger, rule)
    }

    #[test]
    fn full_takes_everything() {
        let off = [0.1, 0.2];
        let on = [1.0, 1.1, 1.2];
        let (ledger, rule) = setup(RuleSpec::constant_one(), &off, &on);
        let set = select_calibration(
            &StrategyKind::Full,
            3,
            0.5,
            &Features::new(&off, &on),
            &ledger,
            &rule,
        )
        .unwrap();
        assert_eq!(set.indices, vec![-2, -1, 0, 1, 2]);
        assert_eq!(set.augmented(), vec![-2, -1, 0, 1, 2, 3]);
    }

    #[test]
    fn express_equals_s_full_for_feature_independent_rules() {
        let off = [0.3, 1.7, 0.9];
        let on = [0.2, 1.5, 1.9, 0.4];
        let (ledger, rule) = setup(RuleSpec::constant_one(), &off, &on);
        let f = Features::new(&off, &on);
        let a = select_calibration(&StrategyKind::Express, 4, 1.0, &f, &ledger, &rule).unwrap();
        let b = select_calibration(&StrategyKind::SFull, 4, 1.0, &f, &ledger, &rule).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unselected_test_point_is_a_contract_violation() {
        let spec = RuleSpec::running_count_threshold(200.0, 1.0).unwrap();
        let (ledger, rule) = setup(spec, &[0.5], &[]);
        let err = select_calibration(
            &StrategyKind::SFix,
            0,
            1.5,
            &Features::new(&[0.5], &[]),
            &ledger,
            &rule,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn candidate_windows() {
        let off50: Vec<i64> = (-50..0).collect();
        let w = candidate_window(&StrategyKind::KExpress { k: 10 }, 5, 50);
        assert_eq!(w, off50.iter().copied().chain(0..5).collect::<Vec<_>>());
        let w = candidate_window(&StrategyKind::KExpress { k: 2 }, 7, 1);
        assert_eq!(w, vec![-1, 5, 6]);
        assert_eq!(candidate_window(&StrategyKind::Full, 0, 3), vec![-3, -2, -1]);
    }

    #[test]
    fn hand_checked_selection_under_rule_b() {
        // rule: x < 1 + count/1
        let spec = RuleSpec::running_count_threshold(1.0, 1.0).unwrap();
        let off = [0.5, 1.5, 2.5];
        // t=0: thr 1, x=0.5 -> 1; t=1: thr 2, x=2.2 -> 0; t=2: thr 2, x=1.9 -> 1
        let on = [0.5, 2.2, 1.9];
        let (ledger, rule) = setup(spec, &off, &on);
        assert_eq!(ledger.history().bits(), &[true, false, true]);
        // test rule at t=3: x < 3
        let f = Features::new(&off, &on);
        let x_t = 1.2;
        let get = |k| select_calibration(&k, 3, x_t, &f, &ledger, &rule).unwrap().indices;
        assert_eq!(get(StrategyKind::SFull), vec![-3, -2, -1, 0, 1, 2]);
        assert_eq!(get(StrategyKind::SFix), vec![-3, -2, -1]);
        // signatures over rules (thr 1, 2, 2): x_t=1.2 -> (0,1,1)
        // -3:0.5 -> (1,1,1) no; -2:1.5 -> (0,1,1) yes; -1:2.5 -> (0,0,0) no
        // 0:0.5 no; 1:2.2 -> (0,0,0) no; 2:1.9 -> (0,1,1) yes
        assert_eq!(get(StrategyKind::Express), vec![-2, 2]);
        // last two rules (thr 2, 2): x_t -> (1,1)
        assert_eq!(get(StrategyKind::KExpress { k: 2 }), vec![-3, -2, 2]);
        // ADA online: s_j == S_j(x_t): s=(1,0,1) vs (0,1,1) -> only j=2
        assert_eq!(get(StrategyKind::Ada), vec![-3, -2, -1, 2]);
    }

    #[test]
    fn k_express_validation() {
        assert!(StrategyKind::KExpress { k: 0 }.validate().is_err());
        assert!(StrategyKind::ExpressM { horizon_t: Some(1) }.validate().is_err());
        assert!(StrategyKind::ExpressM { horizon_t: Some(2) }.validate().is_ok());
    }

    #[test]
    fn serde_tags() {
        let k: StrategyKind = serde_json::from_str(r#"{"kind":"k_express","k":10}"#).unwrap();
        assert_eq!(k, StrategyKind::KExpress { k: 10 });
        let m: StrategyKind = serde_json::from_str(r#"{"kind":"express_m"}"#).unwrap();
        assert_eq!(m, StrategyKind::ExpressM { horizon_t: None });
        let s: StrategyKind = serde_json::from_str(r#"{"kind":"s_fix"}"#).unwrap();
        assert_eq!(s.label(), "S-FIX");
    }
}
