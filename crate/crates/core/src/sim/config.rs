//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "name": "rule_b",
//!   "data": {"n_off": 50, "n_on": 200, "beta": 1.0, "noise_param": "variance"},
//!   "rule": {"family": "running_count_threshold", "tau0": 200, "tau1": 1},
//!   "strategies": [{"kind": "s_fix"}, {"kind": "k_express", "k": 10}],
//!   "baselines": [{"baseline": "lord"}, {"baseline": "aci", "gamma_step": 0.005}],
//!   "alpha": 0.4,
//!   "replicates": 10000,
//!   "seed": 1,
//!   "output_path": "out/rule_b"
//! }
//! ```
//!
//! A two-branch rule is written as
//! `{"past": {...}, "terminal": {...}, "terminal_time": 19}`; `terminal_time`
//! defaults to the last online time and such rules default to the terminal
//! protocol.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::DataGenConfig;
use crate::conformal::{Level, ScoreFunction};
use crate::engine::{validate_methods, BaselineConfig, Method, Protocol};
use crate::error::{Error, Result};
use crate::selection::{RuleFamily, RuleSpec, SelectionRule};
use crate::strategies::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    family: RuleFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau1: Option<f64>,
}

impl TryFrom<RawSpec> for RuleSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                Error::Config(format!("rule family {:?} requires {name}", raw.family))
            })
        };
        match raw.family {
            RuleFamily::ConstantOne => Ok(RuleSpec::constant_one()),
            RuleFamily::CountGate => RuleSpec::count_gate(need(raw.tau1, "tau1")?),
            RuleFamily::Custom => Err(Error::Config(
                "custom rules cannot be loaded from a config file".into(),
            )),
            family => RuleSpec::new(family, need(raw.tau0, "tau0")?, need(raw.tau1, "tau1")?),
        }
    }
}

impl From<&RuleSpec> for RawSpec {
    fn from(s: &RuleSpec) -> Self {
        let (tau0, tau1) = match s.family {
            RuleFamily::ConstantOne | RuleFamily::Custom => (None, None),
            RuleFamily::CountGate => (None, Some(s.tau1)),
            _ => (Some(s.tau0), Some(s.tau1)),
        };
        Self {
            family: s.family,
            tau0,
            tau1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<RuleFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    past: Option<RawSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal: Option<RawSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal_time: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRule", into = "RawRule")]
pub enum RuleConfig {
    Uniform(RuleSpec),
    Composite {
        past: RuleSpec,
        terminal: RuleSpec,
        terminal_time: Option<usize>,
    },
}

impl TryFrom<RawRule> for RuleConfig {
    type Error = Error;

    fn try_from(raw: RawRule) -> Result<Self> {
        match (raw.family, raw.past, raw.terminal) {
            (Some(family), None, None) if raw.terminal_time.is_none() => {
                Ok(RuleConfig::Uniform(RuleSpec::try_from(RawSpec {
                    family,
                    tau0: raw.tau0,
                    tau1: raw.tau1,
                })?))
            }
            (None, Some(past), Some(terminal)) if raw.tau0.is_none() && raw.tau1.is_none() => {
                Ok(RuleConfig::Composite {
                    past: past.try_into()?,
                    terminal: terminal.try_into()?,
                    terminal_time: raw.terminal_time,
                })
            }
            _ => Err(Error::Config(
                "rule must be either {family, tau0, tau1} or {past, terminal[, terminal_time]}"
                    .into(),
            )),
        }
    }
}

impl From<RuleConfig> for RawRule {
    fn from(r: RuleConfig) -> Self {
        match r {
            RuleConfig::Uniform(s) => {
                let s = RawSpec::from(&s);
                RawRule {
                    family: Some(s.family),
                    tau0: s.tau0,
                    tau1: s.tau1,
                    past: None,
                    terminal: None,
                    terminal_time: None,
                }
            }
            RuleConfig::Composite {
                past,
                terminal,
                terminal_time,
            } => RawRule {
                family: None,
                tau0: None,
                tau1: None,
                past: Some((&past).into()),
                terminal: Some((&terminal).into()),
                terminal_time,
            },
        }
    }
}

impl RuleConfig {
    pub fn build(&self, n_on: usize) -> SelectionRule {
        match self {
            RuleConfig::Uniform(s) => SelectionRule::uniform(s.clone()),
            RuleConfig::Composite {
                past,
                terminal,
                terminal_time,
            } => SelectionRule::composite(
                past.clone(),
                terminal.clone(),
                terminal_time.unwrap_or(n_on.saturating_sub(1)),
            ),
        }
    }

    pub fn default_protocol(&self) -> Protocol {
        match self {
            RuleConfig::Uniform(_) => Protocol::EverySelected,
            RuleConfig::Composite { .. } => Protocol::Terminal,
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_replicates() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataGenConfig,
    pub rule: RuleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub strategies: Vec<StrategyKind>,
    #[serde(default)]
    pub baselines: Vec<BaselineConfig>,
    pub alpha: Level,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn protocol(&self) -> Protocol {
        self.protocol.unwrap_or_else(|| self.rule.default_protocol())
    }

    pub fn selection_rule(&self) -> SelectionRule {
        self.rule.build(self.data.n_on)
    }

    /// Strategies first, then baselines, in config order.
    pub fn methods(&self) -> Vec<Method> {
        self.strategies
            .iter()
            .copied()
            .map(Method::from)
            .chain(self.baselines.iter().cloned().map(Method::from))
            .collect()
    }

    /// `μ̂(x) = βx`, the true regression function.
    pub fn score_function(&self) -> ScoreFunction {
        ScoreFunction::linear(self.data.beta)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.selection_rule().validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if let RuleConfig::Composite {
            terminal_time: Some(t),
            ..
        } = self.rule
        {
            if t >= self.data.n_on {
                return Err(Error::Config(format!(
                    "terminal_time {t} lies outside the online horizon {}",
                    self.data.n_on
                )));
            }
        }
        validate_methods(&self.methods(), self.alpha, self.data.n_on)?;
        let mut labels: Vec<String> = self.methods().iter().map(Method::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("method {} listed twice", w[0])));
        }
        Ok(())
    }
}

/// Parses and validates a config. Syntax and schema errors carry the line
/// and column of the offending token.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let message = match msg.rfind(" at line ") {
            Some(i) => msg[..i].to_string(),
            None => msg,
        };
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message,
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RULE_B: &str = r#"{
        "data": {"n_off": 50, "n_on": 200},
        "rule": {"family": "running_count_threshold", "tau0": 200, "tau1": 1},
        "strategies": [{"kind": "s_fix"}, {"kind": "express_m"}],
        "baselines": [{"baseline": "lord", "W0": 0.2}, {"baseline": "aci", "gamma_step": 0.01}],
        "alpha": 0.4
    }"#;

    #[test]
    fn parses_uniform_rule() {
        let cfg = parse_config(RULE_B).unwrap();
        assert_eq!(cfg.protocol(), Protocol::EverySelected);
        assert_eq!(cfg.methods().len(), 4);
        assert_eq!(cfg.replicates, 1000);
        assert_eq!(
            cfg.rule,
            RuleConfig::Uniform(RuleSpec::running_count_threshold(200.0, 1.0).unwrap())
        );
    }

    #[test]
    fn parses_composite_rule() {
        let text = r#"{
            "data": {"n_off": 10, "n_on": 20},
            "rule": {"past": {"family": "rising_count_threshold", "tau0": 20, "tau1": 0},
                     "terminal": {"family": "count_gate", "tau1": 16}},
            "strategies": [{"kind": "express"}],
            "alpha": 0.4
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.protocol(), Protocol::Terminal);
        assert_eq!(cfg.selection_rule().terminal.unwrap().1, 19);
    }

    #[test]
    fn round_trips() {
        let cfg = parse_config(RULE_B).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_are_line_anchored() {
        let bad = "{\n  \"data\": {\"n_off\": 5, \"n_on\": 5},\n  \"rule\": {\"family\": \"shifted_threshold\", \"tau1\": 2},\n  \"alpha\": 0.4\n}";
        match parse_config(bad).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("tau0"), "{message}");
            }
            e => panic!("{e}"),
        }
        let bad_alpha = "{\"data\": {\"n_off\": 5, \"n_on\": 5},\n\"rule\": {\"family\": \"constant_one\"},\n\"alpha\": 1.5}";
        assert!(matches!(parse_config(bad_alpha), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_config("{"), Err(Error::Parse { .. })));
    }

    #[test]
    fn semantic_errors() {
        let no_methods = r#"{"data": {"n_off": 5, "n_on": 5}, "rule": {"family": "constant_one"}, "alpha": 0.4}"#;
        assert!(matches!(parse_config(no_methods), Err(Error::Config(_))));
        let t1 = r#"{"data": {"n_off": 5, "n_on": 1}, "rule": {"family": "constant_one"},
                     "strategies": [{"kind": "express_m"}], "alpha": 0.4}"#;
        assert!(matches!(parse_config(t1), Err(Error::Config(_))));
        let dup = r#"{"data": {"n_off": 5, "n_on": 3}, "rule": {"family": "constant_one"},
                     "strategies": [{"kind": "full"}, {"kind": "full"}], "alpha": 0.4}"#;
        assert!(matches!(parse_config(dup), Err(Error::Config(_))));
        assert!(matches!(load_config("/nonexistent/x.json"), Err(Error::Io { .. })));
    }
}
