//! Built-in simulation configurations.
//!
//! All presets use `α = 0.4` and `μ̂(x) = x`. Rule A is the two-branch rule:
//! `x ↦ 1{x > count/τ0}` before the terminal time and `1{count > τ1}` at it.
//! Rules B and C default to `τ0 = 200, τ1 = 1` (B) and
//! `τ0 = 200, τ1 = 2` (C).

use super::config::{ExperimentConfig, RuleConfig};
use super::data::DataGenConfig;
use crate::baselines::{AciClip, GammaSequence};
use crate::conformal::Level;
use crate::engine::{AciConfig, BaselineConfig, LordConfig};
use crate::error::{Error, Result};
use crate::selection::RuleSpec;
use crate::strategies::StrategyKind;

pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "illustration1",
        summary: "rule A (tau0=20, tau1=16), n_off=10, n_on=20, terminal-time miscoverage, 1e6 runs",
    },
    PresetInfo {
        name: "illustration2",
        summary: "rule B (tau0=200, tau1=1), n_off=50, n_on=200, FCR over time, 1e4 runs",
    },
    PresetInfo {
        name: "illustration3",
        summary: "rule B (tau0=1500, tau1=1), n_off=200, n_on=1500, LORD-CI / ACI / 50-EXPRESS, 1e4 runs",
    },
    PresetInfo {
        name: "illustration4",
        summary: "rules B and C, n_off=10, n_on=20, all strategies, 1e6 runs",
    },
    PresetInfo {
        name: "illustration5",
        summary: "rules B and C, n_off=50, n_on=200, miscoverage over time, 1e4 runs",
    },
    PresetInfo {
        name: "illustration6",
        summary: "rule C, n_off=50, n_on=200, FCR over time, 1e4 runs",
    },
    PresetInfo {
        name: "illustration7",
        summary: "rule C, n_off=200, n_on=1500, LORD-CI / ACI / 50-EXPRESS, 1e4 runs",
    },
];

pub const ACI_STEPS: [f64; 3] = [0.001, 0.005, 0.01];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.name)
}

fn all_strategies() -> Vec<StrategyKind> {
    vec![
        StrategyKind::Full,
        StrategyKind::SFull,
        StrategyKind::SFix,
        StrategyKind::Ada,
        StrategyKind::Express,
        StrategyKind::KExpress { k: 10 },
        StrategyKind::ExpressM { horizon_t: None },
    ]
}

fn baselines() -> Vec<BaselineConfig> {
    std::iter::once(BaselineConfig::Lord(LordConfig {
        w0: None,
        gamma_seq: GammaSequence::InverseSquare,
    }))
    .chain(ACI_STEPS.iter().map(|&g| {
        BaselineConfig::Aci(AciConfig {
            gamma_step: g,
            clip: AciClip::None,
        })
    }))
    .collect()
}

fn rule_a() -> RuleConfig {
    RuleConfig::Composite {
        past: RuleSpec::rising_count_threshold(20.0, 0.0).expect("valid"),
        terminal: RuleSpec::count_gate(16.0).expect("valid"),
        terminal_time: None,
    }
}

fn rule_b(tau0: f64) -> RuleConfig {
    RuleConfig::Uniform(RuleSpec::running_count_threshold(tau0, 1.0).expect("valid"))
}

fn rule_c() -> RuleConfig {
    RuleConfig::Uniform(RuleSpec::shifted_threshold(200.0, 2.0).expect("valid"))
}

fn experiment(
    name: &str,
    (n_off, n_on): (usize, usize),
    rule: RuleConfig,
    strategies: Vec<StrategyKind>,
    baselines: Vec<BaselineConfig>,
    replicates: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        data: DataGenConfig::new(n_off, n_on),
        rule,
        protocol: None,
        strategies,
        baselines,
        alpha: Level::new(0.4).expect("valid"),
        replicates,
        seed: 1,
        output_path: None,
    }
}

/// The runs making up a preset (two for the rule B / rule C comparisons).
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let express50 = || vec![StrategyKind::KExpress { k: 50 }];
    Ok(match name {
        "illustration1" => vec![experiment(
            name,
            (10, 20),
            rule_a(),
            all_strategies(),
            vec![],
            1_000_000,
        )],
        "illustration2" => vec![experiment(
            name,
            (50, 200),
            rule_b(200.0),
            all_strategies(),
            vec![],
            10_000,
        )],
        "illustration3" => vec![experiment(
            name,
            (200, 1500),
            rule_b(1500.0),
            express50(),
            baselines(),
            10_000,
        )],
        "illustration4" | "illustration5" => {
            let (size, reps) = if name == "illustration4" {
                ((10, 20), 1_000_000)
            } else {
                ((50, 200), 10_000)
            };
            vec![
                experiment(
                    &format!("{name}_rule_b"),
                    size,
                    rule_b(200.0),
                    all_strategies(),
                    vec![],
                    reps,
                ),
                experiment(
                    &format!("{name}_rule_c"),
                    size,
                    rule_c(),
                    all_strategies(),
                    vec![],
                    reps,
                ),
            ]
        }
        "illustration6" => vec![experiment(
            name,
            (50, 200),
            rule_c(),
            all_strategies(),
            vec![],
            10_000,
        )],
        "illustration7" => vec![experiment(
            name,
            (200, 1500),
            rule_c(),
            express50(),
            baselines(),
            10_000,
        )],
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                preset_names().collect::<Vec<_>>().join(", ")
            )))
        }
    })
}
