//! Level-adaptation baselines that calibrate on the offline pool only:
//! conformal LORD-CI and adaptive conformal inference (ACI).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::conformal::{conformal_threshold, Radius};
use crate::error::{Error, Result};

/// Deterministic spending sequence `γ_0, γ_1, …` with `Σγ_i ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSequence {
    /// `γ_i = 6 / (π² (i+1)²)`, summing to exactly one.
    InverseSquare,
    /// Finite prefix; `γ_i = 0` beyond its length.
    Explicit(Vec<f64>),
}

impl Default for GammaSequence {
    fn default() -> Self {
        GammaSequence::InverseSquare
    }
}

impl GammaSequence {
    #[inline]
    pub fn gamma(&self, i: usize) -> f64 {
        match self {
            GammaSequence::InverseSquare => {
                let k = (i + 1) as f64;
                6.0 / (PI * PI * k * k)
            }
            GammaSequence::Explicit(v) => v.get(i).copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let GammaSequence::Explicit(v) = self {
            if v.iter().any(|g| !(*g >= 0.0)) {
                return Err(Error::Config("gamma sequence must be nonnegative".into()));
            }
            let total: f64 = v.iter().sum();
            if total > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "gamma sequence must sum to at most one, sums to {total}"
                )));
            }
        }
        Ok(())
    }
}

/// LORD-CI wealth state for one stream.
#[derive(Debug, Clone)]
pub struct LordState {
    pub alpha: f64,
    pub w0: f64,
    pub gamma: GammaSequence,
    /// Selection times `τ_1 < τ_2 < …`.
    pub selected_times: Vec<usize>,
    /// `α_t` for every time processed so far.
    pub alpha_spent: Vec<f64>,
}

impl LordState {
    pub fn new(alpha: f64, w0: f64, gamma: GammaSequence) -> Result<Self> {
        gamma.validate()?;
        if !(w0 > 0.0 && w0 < alpha) {
            return Err(Error::Config(format!(
                "LORD-CI initial wealth must lie in (0, {alpha}), got {w0}"
            )));
        }
        Ok(Self {
            alpha,
            w0,
            gamma,
            selected_times: Vec::new(),
            alpha_spent: Vec::new(),
        })
    }

    /// Computes `α_t`, records it, and registers the decision at `t`.
    /// Times must be processed in order.
    pub fn step(&mut self, t: usize, selected: bool) -> f64 {
        debug_assert_eq!(t, self.alpha_spent.len());
        let a = lord_alpha(self, t);
        self.alpha_spent.push(a);
        if selected {
            self.selected_times.push(t);
        }
        a
    }
}

/// `α_t = γ_t W_0 + (α − W_0) γ_{t−τ_1} + α Σ_{k≥2, τ_k<t} γ_{t−τ_k}`.
///
/// Only selections strictly before `t` contribute, so `α_t` is a function of
/// `s_0..s_{t−1}`.
pub fn lord_alpha(state: &LordState, t: usize) -> f64 {
    let mut a = state.gamma.gamma(t) * state.w0;
    let mut past = state.selected_times.iter().copied().filter(|&tau| tau < t);
    if let Some(first) = past.next() {
        a += (state.alpha - state.w0) * state.gamma.gamma(t - first);
        for tau in past {
            a += state.alpha * state.gamma.gamma(t - tau);
        }
    }
    a
}

/// Radius from offline scores at level `α_t`.
pub fn lord_interval(offline_scores: &[f64], alpha_t: f64) -> Radius {
    conformal_threshold(offline_scores, alpha_t)
}

/// `Σ_{t≤T} α_t / (1 ∨ Σ_{t≤T} S_t) ≤ α` at every prefix `T`.
pub fn lord_invariant_holds(alpha_spent: &[f64], decisions: &[bool], alpha: f64) -> bool {
    let mut spent = 0.0;
    let mut selected = 0u64;
    alpha_spent.iter().zip(decisions).all(|(&a, &s)| {
        spent += a;
        selected += u64::from(s);
        spent <= alpha * selected.max(1) as f64 + 1e-12
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AciClip {
    #[default]
    None,
    UnitInterval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AciState {
    pub alpha_t: f64,
    pub gamma_step: f64,
    pub clip: AciClip,
}

impl AciState {
    pub fn new(alpha: f64, gamma_step: f64, clip: AciClip) -> Result<Self> {
        if !(gamma_step > 0.0 && gamma_step.is_finite()) {
            return Err(Error::Config(format!(
                "ACI step size must be positive, got {gamma_step}"
            )));
        }
        Ok(Self {
            alpha_t: alpha,
            gamma_step,
            clip,
        })
    }

    /// Prediction radius at the current working level. Levels at or above
    /// one give the empty set, levels at or below zero the real line.
    pub fn radius(&self, offline_scores: &[f64]) -> Radius {
        if self.alpha_t >= 1.0 {
            Radius::Empty
        } else {
            conformal_threshold(offline_scores, self.alpha_t)
        }
    }
}

/// `α_{t} = α_{t−1} + γ (α − err)`.
pub fn aci_update(state: AciState, err: bool, alpha_target: f64) -> AciState {
    let mut next = state.alpha_t + state.gamma_step * (alpha_target - f64::from(u8::from(err)));
    if state.clip == AciClip::UnitInterval {
        next = next.clamp(0.0, 1.0);
    }
    AciState {
        alpha_t: next,
        ..state
    }
}

/// Right-hand side of the almost-sure ACI bound
/// `|FCP(T) − α| ≤ (max{α_1, 1−α_1} + γ) / (Σ S_i · γ)`.
pub fn aci_fcp_bound(alpha_1: f64, gamma_step: f64, n_selected: u64) -> f64 {
    if n_selected == 0 {
        return f64::INFINITY;
    }
    (alpha_1.max(1.0 - alpha_1) + gamma_step) / (n_selected as f64 * gamma_step)
}
