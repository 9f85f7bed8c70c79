//! The online selective conformal procedure.
//!
//! At every online time the engine realizes the rule from past decisions,
//! decides whether the current feature is selected and, if so, selects
//! calibration data, thresholds the calibration scores and reports an
//! interval. The decision is appended to the ledger either way.
//!
//! Two code paths produce identical trajectories:
//!
//! * [`run_stream`] rebuilds every calibration set from scratch through
//!   [`select_calibration`] with a ledger truncated to the current time.
//! * [`run_methods`] runs the decision stream once, caches the realized
//!   decision signature `(S_0(x), …, S_{N−1}(x))` of every point as a bitset,
//!   and evaluates any number of methods against it. The Monte Carlo runner
//!   uses this path.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{aci_update, AciClip, AciState, GammaSequence, LordState};
use crate::conformal::{
    build_interval, conformal_p_value, conformal_threshold, threshold_rank, Interval, Level,
    Observation, PValue, Radius, ScoreFunction,
};
use crate::error::{Error, Result};
use crate::selection::{RealizedRule, RuleLedger, SelectionRule};
use crate::strategies::{select_calibration, CalibrationSet, Features, StrategyKind};

/// Offline block `Z_{−n}..Z_{−1}` followed by the online block `Z_0..Z_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub offline: Vec<Observation>,
    pub online: Vec<Observation>,
}

impl Stream {
    pub fn offline_features(&self) -> Vec<f64> {
        self.offline.iter().map(|o| o.x).collect()
    }

    pub fn online_features(&self) -> Vec<f64> {
        self.online.iter().map(|o| o.x).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LordConfig {
    /// Initial wealth; defaults to `α/2`.
    #[serde(default, rename = "W0", alias = "w0")]
    pub w0: Option<f64>,
    #[serde(default)]
    pub gamma_seq: GammaSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AciConfig {
    pub gamma_step: f64,
    #[serde(default)]
    pub clip: AciClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "baseline", rename_all = "snake_case")]
pub enum BaselineConfig {
    Lord(LordConfig),
    Aci(AciConfig),
}

/// Anything that turns a selected test point into an interval.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Strategy(StrategyKind),
    Baseline(BaselineConfig),
}

impl From<StrategyKind> for Method {
    fn from(kind: StrategyKind) -> Self {
        Method::Strategy(kind)
    }
}

impl From<BaselineConfig> for Method {
    fn from(cfg: BaselineConfig) -> Self {
        Method::Baseline(cfg)
    }
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Strategy(kind) => kind.label(),
            Method::Baseline(BaselineConfig::Lord(_)) => "LORD-CI".into(),
            Method::Baseline(BaselineConfig::Aci(c)) => format!("ACI-{}", c.gamma_step),
        }
    }

    pub fn validate(&self, alpha: Level) -> Result<()> {
        match self {
            Method::Strategy(kind) => kind.validate(),
            Method::Baseline(BaselineConfig::Lord(c)) => {
                LordState::new(alpha.value(), c.w0.unwrap_or(alpha.value() / 2.0), c.gamma_seq.clone())
                    .map(|_| ())
            }
            Method::Baseline(BaselineConfig::Aci(c)) => {
                AciState::new(alpha.value(), c.gamma_step, c.clip).map(|_| ())
            }
        }
    }

    fn needs_signatures(&self) -> bool {
        matches!(
            self,
            Method::Strategy(
                StrategyKind::Express | StrategyKind::KExpress { .. } | StrategyKind::ExpressM { .. }
            )
        )
    }
}

/// Which selected times get an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    EverySelected,
    /// Only the last online time is assessed (the two-branch rule A setup).
    Terminal,
}

impl Protocol {
    #[inline]
    fn assesses(self, t: usize, n_on: usize) -> bool {
        match self {
            Protocol::EverySelected => true,
            Protocol::Terminal => t + 1 == n_on,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineSettings {
    pub alpha: Level,
    pub protocol: Protocol,
}

impl EngineSettings {
    pub fn new(alpha: Level) -> Self {
        Self {
            alpha,
            protocol: Protocol::EverySelected,
        }
    }

    pub fn with_protocol(mut self, protocol: Protocol) -> Self {
        self.protocol = protocol;
        self
    }
}

/// One online time. `interval`, `covered` and `p_value` are present exactly
/// when the point was selected and assessed under the protocol; `p_value`
/// is additionally absent for EXPRESS-M, whose coverage is the conjunction
/// of two arm-level p-value tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub selected: bool,
    /// Working miscoverage level at `t` (`α_t` for the baselines).
    pub level: f64,
    pub calib_size: usize,
    pub interval: Option<Interval>,
    pub covered: Option<bool>,
    pub p_value: Option<PValue>,
}

impl StepRecord {
    pub fn reported(&self) -> bool {
        self.interval.is_some()
    }

    pub fn miscovered(&self) -> bool {
        self.covered == Some(false)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub label: String,
    pub records: Vec<StepRecord>,
    pub ledger: Arc<RuleLedger>,
}

impl Trajectory {
    pub fn decisions(&self) -> &[bool] {
        self.ledger.history().bits()
    }

    /// Per-time working levels (`α_t` sequence for LORD-CI).
    pub fn levels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.level).collect()
    }
}

/// Sub-levels `(α/√T, (1 − 1/√T)α)` for the S-FIX and EXPRESS arms.
pub fn express_m_levels(alpha: f64, horizon_t: usize) -> (f64, f64) {
    let share = 1.0 / (horizon_t as f64).sqrt();
    (share * alpha, (1.0 - share) * alpha)
}

/// Features and scores of every candidate calibration point.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationPool<'a> {
    pub features: Features<'a>,
    pub offline_scores: &'a [f64],
    pub online_scores: &'a [f64],
}

impl CalibrationPool<'_> {
    #[inline]
    pub fn score(&self, index: i64) -> f64 {
        if index < 0 {
            self.offline_scores[(self.offline_scores.len() as i64 + index) as usize]
        } else {
            self.online_scores[index as usize]
        }
    }

    pub fn scores(&self, set: &CalibrationSet) -> Vec<f64> {
        set.indices.iter().map(|&j| self.score(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressMOutcome {
    pub interval: Interval,
    pub fix: CalibrationSet,
    pub express: CalibrationSet,
    pub fix_radius: Radius,
    pub express_radius: Radius,
}

impl ExpressMOutcome {
    /// Size of the arm whose radius determined the intersection (EXPRESS on ties).
    pub fn calib_size(&self) -> usize {
        if self.fix_radius < self.express_radius {
            self.fix.len()
        } else {
            self.express.len()
        }
    }
}

/// Intersection of the S-FIX interval at level `α/√T` and the EXPRESS
/// interval at level `(1 − 1/√T)α`.
#[allow(clippy::too_many_arguments)]
pub fn express_m_interval(
    t: usize,
    x_t: f64,
    pool: &CalibrationPool<'_>,
    ledger: &RuleLedger,
    test_rule: &RealizedRule,
    alpha: Level,
    horizon_t: usize,
    score_fn: &ScoreFunction,
) -> Result<ExpressMOutcome> {
    StrategyKind::ExpressM {
        horizon_t: Some(horizon_t),
    }
    .validate()?;
    let (a_fix, a_exp) = express_m_levels(alpha.value(), horizon_t);
    let fix = select_calibration(&StrategyKind::SFix, t, x_t, &pool.features, ledger, test_rule)?;
    let express =
        select_calibration(&StrategyKind::Express, t, x_t, &pool.features, ledger, test_rule)?;
    let fix_radius = conformal_threshold(&pool.scores(&fix), a_fix);
    let express_radius = conformal_threshold(&pool.scores(&express), a_exp);
    Ok(ExpressMOutcome {
        interval: build_interval(x_t, score_fn, fix_radius.min(express_radius)),
        fix,
        express,
        fix_radius,
        express_radius,
    })
}

fn resolve_horizon(kind: &StrategyKind, n_on: usize) -> Result<usize> {
    match *kind {
        StrategyKind::ExpressM { horizon_t } => {
            let h = horizon_t.unwrap_or(n_on);
            StrategyKind::ExpressM { horizon_t: Some(h) }.validate()?;
            Ok(h)
        }
        _ => Ok(0),
    }
}

enum BaselineState {
    None,
    Lord(LordState),
    Aci(AciState),
}

impl BaselineState {
    fn new(method: &Method, alpha: Level) -> Result<Self> {
        Ok(match method {
            Method::Strategy(_) => BaselineState::None,
            Method::Baseline(BaselineConfig::Lord(c)) => BaselineState::Lord(LordState::new(
                alpha.value(),
                c.w0.unwrap_or(alpha.value() / 2.0),
                c.gamma_seq.clone(),
            )?),
            Method::Baseline(BaselineConfig::Aci(c)) => {
                BaselineState::Aci(AciState::new(alpha.value(), c.gamma_step, c.clip)?)
            }
        })
    }

    /// Working level at `t`, before the decision at `t` is known.
    fn level(&mut self, t: usize, selected: bool, alpha: f64) -> f64 {
        match self {
            BaselineState::None => alpha,
            BaselineState::Lord(s) => s.step(t, selected),
            BaselineState::Aci(s) => s.alpha_t,
        }
    }

    fn radius(&self, offline_scores: &[f64], level: f64) -> Radius {
        match self {
            BaselineState::Aci(s) => s.radius(offline_scores),
            _ => conformal_threshold(offline_scores, level),
        }
    }

    fn observe(&mut self, covered: bool, alpha: f64) {
        if let BaselineState::Aci(s) = self {
            *s = aci_update(*s, !covered, alpha);
        }
    }
}

fn scores_of(obs: &[Observation], score_fn: &ScoreFunction) -> Vec<f64> {
    obs.iter().map(|o| score_fn.score(o.x, o.y)).collect()
}

/// Runs one method over the stream, recomputing every calibration set from
/// scratch.
pub fn run_stream(
    stream: &Stream,
    rule: &SelectionRule,
    method: &Method,
    settings: EngineSettings,
    score_fn: &ScoreFunction,
) -> Result<Trajectory> {
    rule.validate()?;
    method.validate(settings.alpha)?;
    let alpha = settings.alpha.value();
    let n_on = stream.online.len();
    let offline_x = stream.offline_features();
    let online_x = stream.online_features();
    let offline_scores = scores_of(&stream.offline, score_fn);
    let online_scores = scores_of(&stream.online, score_fn);
    let horizon = match method {
        Method::Strategy(kind) => resolve_horizon(kind, n_on)?,
        Method::Baseline(_) => 0,
    };
    let mut baseline = BaselineState::new(method, settings.alpha)?;

    let mut ledger = RuleLedger::new(rule.clone());
    let mut records = Vec::with_capacity(n_on);
    for t in 0..n_on {
        let test_rule = ledger.next_rule();
        let x_t = online_x[t];
        let selected = ledger.evaluate(&test_rule, x_t);
        let level = baseline.level(t, selected, alpha);
        let mut record = StepRecord {
            t,
            selected,
            level,
            calib_size: 0,
            interval: None,
            covered: None,
            p_value: None,
        };
        if selected && settings.protocol.assesses(t, n_on) {
            let pool = CalibrationPool {
                features: Features::new(&offline_x, &online_x[..t]),
                offline_scores: &offline_scores,
                online_scores: &online_scores[..t],
            };
            let test_score = online_scores[t];
            let (interval, calib_size, p_value) = match method {
                Method::Strategy(kind @ StrategyKind::ExpressM { .. }) => {
                    let _ = kind;
                    let out = express_m_interval(
                        t,
                        x_t,
                        &pool,
                        &ledger,
                        &test_rule,
                        settings.alpha,
                        horizon,
                        score_fn,
                    )?;
                    (out.interval, out.calib_size(), None)
                }
                Method::Strategy(kind) => {
                    let set =
                        select_calibration(kind, t, x_t, &pool.features, &ledger, &test_rule)?;
                    let scores = pool.scores(&set);
                    let interval =
                        build_interval(x_t, score_fn, conformal_threshold(&scores, level));
                    (interval, set.len(), Some(conformal_p_value(&scores, test_score)))
                }
                Method::Baseline(_) => {
                    let interval =
                        build_interval(x_t, score_fn, baseline.radius(&offline_scores, level));
                    (
                        interval,
                        offline_scores.len(),
                        Some(conformal_p_value(&offline_scores, test_score)),
                    )
                }
            };
            let covered = interval.contains(stream.online[t].y);
            baseline.observe(covered, alpha);
            record.calib_size = calib_size;
            record.interval = Some(interval);
            record.covered = Some(covered);
            record.p_value = p_value;
        }
        records.push(record);
        ledger.record_decision(selected);
    }
    Ok(Trajectory {
        label: method.label(),
        records,
        ledger: Arc::new(ledger),
    })
}

/// Decision signatures `S_i(x_p)` for every point `p` and recorded time `i`,
/// packed row-wise into 64-bit words.
struct Signatures {
    words: usize,
    n_offline: usize,
    bits: Vec<u64>,
}

impl Signatures {
    fn build(ledger: &RuleLedger, offline_x: &[f64], online_x: &[f64]) -> Self {
        let n_rules = ledger.len();
        let words = n_rules.div_ceil(64).max(1);
        let n_points = offline_x.len() + online_x.len();
        let mut bits = vec![0u64; words * n_points];
        for (p, &x) in offline_x.iter().chain(online_x).enumerate() {
            let row = &mut bits[p * words..(p + 1) * words];
            for i in 0..n_rules {
                if ledger.replay_at(i, x) {
                    row[i / 64] |= 1 << (i % 64);
                }
            }
        }
        Self {
            words,
            n_offline: offline_x.len(),
            bits,
        }
    }

    #[inline]
    fn row(&self, index: i64) -> &[u64] {
        let p = (self.n_offline as i64 + index) as usize;
        &self.bits[p * self.words..(p + 1) * self.words]
    }

    #[inline]
    fn bit(&self, index: i64, i: usize) -> bool {
        self.row(index)[i / 64] >> (i % 64) & 1 == 1
    }

    /// Rows `a` and `b` agree on every time in `lo..hi`.
    #[inline]
    fn agree(&self, a: i64, b: i64, lo: usize, hi: usize) -> bool {
        if lo >= hi {
            return true;
        }
        let (ra, rb) = (self.row(a), self.row(b));
        let (first, last) = (lo / 64, (hi - 1) / 64);
        for w in first..=last {
            let mut mask = u64::MAX;
            if w == first {
                mask &= u64::MAX << (lo % 64);
            }
            if w == last && hi % 64 != 0 {
                mask &= u64::MAX >> (64 - hi % 64);
            }
            if (ra[w] ^ rb[w]) & mask != 0 {
                return false;
            }
        }
        true
    }
}

/// Evaluates several methods on one stream, sharing the decision stream and
/// the signature cache. Equivalent to calling [`run_stream`] per method.
pub fn run_methods(
    stream: &Stream,
    rule: &SelectionRule,
    methods: &[Method],
    settings: EngineSettings,
    score_fn: &ScoreFunction,
) -> Result<Vec<Trajectory>> {
    rule.validate()?;
    for m in methods {
        m.validate(settings.alpha)?;
    }
    let alpha = settings.alpha.value();
    let n_on = stream.online.len();
    let offline_x = stream.offline_features();
    let online_x = stream.online_features();
    let offline_scores = scores_of(&stream.offline, score_fn);
    let online_scores = scores_of(&stream.online, score_fn);
    let ledger = Arc::new(rule.run(&online_x));
    let signatures = methods
        .iter()
        .any(Method::needs_signatures)
        .then(|| Signatures::build(&ledger, &offline_x, &online_x));

    let n_off = offline_x.len() as i64;
    let feature = |j: i64| {
        if j < 0 {
            offline_x[(n_off + j) as usize]
        } else {
            online_x[j as usize]
        }
    };
    let score = |j: i64| {
        if j < 0 {
            offline_scores[(n_off + j) as usize]
        } else {
            online_scores[j as usize]
        }
    };
    let test_selects = |t: usize, j: i64| match &signatures {
        Some(sig) => sig.bit(j, t),
        None => ledger.replay_at(t, feature(j)),
    };

    let mut out = Vec::with_capacity(methods.len());
    let mut buf = Vec::with_capacity(offline_x.len() + n_on);
    let mut buf2 = Vec::with_capacity(offline_x.len() + n_on);
    for method in methods {
        let horizon = match method {
            Method::Strategy(kind) => resolve_horizon(kind, n_on)?,
            Method::Baseline(_) => 0,
        };
        let mut baseline = BaselineState::new(method, settings.alpha)?;
        let mut records = Vec::with_capacity(n_on);
        for t in 0..n_on {
            let selected = ledger.decision(t);
            let level = baseline.level(t, selected, alpha);
            let mut record = StepRecord {
                t,
                selected,
                level,
                calib_size: 0,
                interval: None,
                covered: None,
                p_value: None,
            };
            if selected && settings.protocol.assesses(t, n_on) {
                let x_t = online_x[t];
                let test_score = online_scores[t];
                let ti = t as i64;
                buf.clear();
                let (radius, calib_size, p_value) = match method {
                    Method::Baseline(_) => {
                        let r = baseline.radius(&offline_scores, level);
                        let p = conformal_p_value(&offline_scores, test_score);
                        (r, offline_scores.len(), Some(p))
                    }
                    Method::Strategy(kind) => {
                        let collect = |buf: &mut Vec<f64>, keep: &dyn Fn(i64) -> bool, lo: i64| {
                            buf.extend((-n_off..0).chain(lo..ti).filter(|&j| keep(j)).map(score));
                        };
                        match *kind {
                            StrategyKind::Full => collect(&mut buf, &|_| true, 0),
                            StrategyKind::SFull => collect(&mut buf, &|j| test_selects(t, j), 0),
                            StrategyKind::SFix => collect(&mut buf, &|j| test_selects(t, j), ti),
                            StrategyKind::Ada => collect(
                                &mut buf,
                                &|j| {
                                    test_selects(t, j)
                                        && (j < 0
                                            || ledger.decision(j as usize)
                                                == ledger.replay_at(j as usize, x_t))
                                },
                                0,
                            ),
                            StrategyKind::Express | StrategyKind::ExpressM { .. } => {
                                let sig = signatures.as_ref().expect("signatures");
                                collect(&mut buf, &|j| sig.bit(j, t) && sig.agree(j, ti, 0, t), 0)
                            }
                            StrategyKind::KExpress { k } => {
                                let sig = signatures.as_ref().expect("signatures");
                                let lo = t.saturating_sub(k);
                                collect(
                                    &mut buf,
                                    &|j| sig.bit(j, t) && sig.agree(j, ti, lo, t),
                                    lo as i64,
                                )
                            }
                        }
                        if let StrategyKind::ExpressM { .. } = kind {
                            let (a_fix, a_exp) = express_m_levels(alpha, horizon);
                            buf2.clear();
                            buf2.extend(
                                (-n_off..0).filter(|&j| test_selects(t, j)).map(score),
                            );
                            let r_fix = threshold_in_place(&mut buf2, a_fix);
                            let r_exp = threshold_in_place(&mut buf, a_exp);
                            let size = if r_fix < r_exp { buf2.len() } else { buf.len() };
                            (r_fix.min(r_exp), size, None)
                        } else {
                            let p = conformal_p_value(&buf, test_score);
                            (threshold_in_place(&mut buf, level), buf.len(), Some(p))
                        }
                    }
                };
                let interval = build_interval(x_t, score_fn, radius);
                let covered = interval.contains(stream.online[t].y);
                baseline.observe(covered, alpha);
                record.calib_size = calib_size;
                record.interval = Some(interval);
                record.covered = Some(covered);
                record.p_value = p_value;
            }
            records.push(record);
        }
        out.push(Trajectory {
            label: method.label(),
            records,
            ledger: Arc::clone(&ledger),
        });
    }
    Ok(out)
}

/// Same result as [`conformal_threshold`], reordering `scores` in place.
fn threshold_in_place(scores: &mut [f64], alpha: f64) -> Radius {
    let m = scores.len();
    let k = threshold_rank(alpha, m);
    if k > m {
        Radius::Infinite
    } else {
        let (_, kth, _) = scores.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        Radius::Finite(*kth)
    }
}

/// Rejects configurations before any data is generated.
pub fn validate_methods(methods: &[Method], alpha: Level, n_on: usize) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::Config("at least one strategy or baseline is required".into()));
    }
    for m in methods {
        m.validate(alpha)?;
        if let Method::Strategy(kind) = m {
            resolve_horizon(kind, n_on)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::RuleSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stream(seed: u64, n_off: usize, n_on: usize) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n| {
            (0..n)
                .map(|_| {
                    let x: f64 = rng.random_range(0.0..2.0);
                    let y = x + rng.random_range(-1.0..1.0) * x;
                    Observation::new(x, y).unwrap()
                })
                .collect::<Vec<_>>()
        };
        let offline = draw(n_off);
        let online = draw(n_on);
        Stream { offline, online }
    }

    fn all_methods() -> Vec<Method> {
        vec![
            StrategyKind::Full.into(),
            StrategyKind::SFull.into(),
            StrategyKind::SFix.into(),
            StrategyKind::Ada.into(),
            StrategyKind::Express.into(),
            StrategyKind::KExpress { k: 3 }.into(),
            StrategyKind::ExpressM { horizon_t: None }.into(),
            BaselineConfig::Lord(LordConfig {
                w0: None,
                gamma_seq: GammaSequence::InverseSquare,
            })
            .into(),
            BaselineConfig::Aci(AciConfig {
                gamma_step: 0.05,
                clip: AciClip::None,
            })
            .into(),
        ]
    }

    #[test]
    fn cached_path_matches_reference_path() {
        let rules = [
            SelectionRule::uniform(RuleSpec::running_count_threshold(4.0, 0.6).unwrap()),
            SelectionRule::uniform(RuleSpec::shifted_threshold(3.0, 1.6).unwrap()),
            SelectionRule::uniform(RuleSpec::constant_one()),
            SelectionRule::composite(
                RuleSpec::rising_count_threshold(20.0, 0.0).unwrap(),
                RuleSpec::count_gate(10.0).unwrap(),
                69,
            ),
        ];
        let alpha = Level::new(0.4).unwrap();
        let f = ScoreFunction::linear(1.0);
        for (seed, rule) in rules.iter().enumerate() {
            for protocol in [Protocol::EverySelected, Protocol::Terminal] {
                let stream = random_stream(seed as u64, 7, 70);
                let settings = EngineSettings::new(alpha).with_protocol(protocol);
                let fast = run_methods(&stream, rule, &all_methods(), settings, &f).unwrap();
                for (m, traj) in all_methods().iter().zip(&fast) {
                    let slow = run_stream(&stream, rule, m, settings, &f).unwrap();
                    assert_eq!(slow.records, traj.records, "{} under rule {seed}", m.label());
                    assert_eq!(slow.decisions(), traj.decisions());
                }
            }
        }
    }

    #[test]
    fn constant_one_full_is_plain_online_split_conformal() {
        let stream = random_stream(3, 5, 30);
        let f = ScoreFunction::linear(1.0);
        let alpha = Level::new(0.2).unwrap();
        let traj = run_stream(
            &stream,
            &SelectionRule::uniform(RuleSpec::constant_one()),
            &StrategyKind::Full.into(),
            EngineSettings::new(alpha),
            &f,
        )
        .unwrap();
        let mut pool: Vec<f64> = stream.offline.iter().map(|o| f.score(o.x, o.y)).collect();
        for (t, rec) in traj.records.iter().enumerate() {
            assert!(rec.selected);
            assert_eq!(rec.calib_size, 5 + t);
            let expected = conformal_threshold(&pool, 0.2);
            assert_eq!(rec.interval.unwrap().radius, expected);
            pool.push(f.score(stream.online[t].x, stream.online[t].y));
        }
    }

    #[test]
    fn never_selecting_rule_reports_nothing() {
        let stream = random_stream(4, 5, 25);
        let rule = SelectionRule::uniform(RuleSpec::running_count_threshold(1.0, -1e300).unwrap());
        let trajs = run_methods(
            &stream,
            &rule,
            &all_methods(),
            EngineSettings::new(Level::new(0.4).unwrap()),
            &ScoreFunction::linear(1.0),
        )
        .unwrap();
        for tr in trajs {
            assert!(tr.records.iter().all(|r| !r.selected && !r.reported()));
            assert_eq!(tr.ledger.len(), 25);
        }
    }

    #[test]
    fn p_value_duality_at_every_selected_step() {
        let stream = random_stream(9, 20, 120);
        let rule = SelectionRule::uniform(RuleSpec::running_count_threshold(10.0, 0.8).unwrap());
        let trajs = run_methods(
            &stream,
            &rule,
            &all_methods(),
            EngineSettings::new(Level::new(0.3).unwrap()),
            &ScoreFunction::linear(1.0),
        )
        .unwrap();
        for tr in trajs {
            for r in tr.records.iter().filter(|r| r.reported()) {
                if let Some(p) = r.p_value {
                    assert_eq!(r.covered, Some(p.exceeds(r.level)), "{}", tr.label);
                }
            }
        }
    }

    #[test]
    fn express_m_merges_by_smaller_radius() {
        assert_eq!(express_m_levels(0.4, 4), (0.2, 0.2));
        let m = ExpressMOutcome {
            interval: Interval::new(0.0, Radius::Finite(2.0)),
            fix: CalibrationSet { t: 0, indices: vec![-1, -2] },
            express: CalibrationSet { t: 0, indices: vec![] },
            fix_radius: Radius::Finite(2.0),
            express_radius: Radius::Infinite,
        };
        assert_eq!(m.fix_radius.min(m.express_radius), Radius::Finite(2.0));
        assert_eq!(m.calib_size(), 2);
    }

    #[test]
    fn express_m_rejects_unit_horizon() {
        let stream = random_stream(1, 3, 1);
        let err = run_stream(
            &stream,
            &SelectionRule::uniform(RuleSpec::constant_one()),
            &StrategyKind::ExpressM { horizon_t: None }.into(),
            EngineSettings::new(Level::new(0.4).unwrap()),
            &ScoreFunction::linear(1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn trajectories_are_deterministic() {
        let stream = random_stream(11, 10, 60);
        let rule = SelectionRule::uniform(RuleSpec::shifted_threshold(5.0, 1.5).unwrap());
        let settings = EngineSettings::new(Level::new(0.4).unwrap());
        let f = ScoreFunction::linear(1.0);
        let a = run_methods(&stream, &rule, &all_methods(), settings, &f).unwrap();
        let b = run_methods(&stream, &rule, &all_methods(), settings, &f).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.records, y.records);
        }
    }

    #[test]
    fn signature_agreement_masks() {
        let rule = SelectionRule::uniform(RuleSpec::running_count_threshold(50.0, 1.0).unwrap());
        let online: Vec<f64> = (0..150).map(|i| (i % 19) as f64 / 10.0).collect();
        let ledger = rule.run(&online);
        let offline = [0.3, 1.2];
        let sig = Signatures::build(&ledger, &offline, &online);
        for (a, b) in [(-2i64, -1i64), (-2, 5), (3, 22), (0, 149)] {
            for (lo, hi) in [(0, 150), (10, 70), (63, 65), (64, 128), (5, 5), (100, 150)] {
                let xa = if a < 0 { offline[(2 + a) as usize] } else { online[a as usize] };
                let xb = if b < 0 { offline[(2 + b) as usize] } else { online[b as usize] };
                let expected =
                    (lo..hi).all(|i| ledger.replay_at(i, xa) == ledger.replay_at(i, xb));
                assert_eq!(sig.agree(a, b, lo, hi), expected, "{a} {b} {lo}..{hi}");
            }
        }
    }
}
