use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conformal::Observation;
use crate::engine::Stream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `ε | X ~ N(0, X/2)`.
    #[default]
    HeteroscedasticHalfX,
}

/// How the second argument of `N(0, X/2)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseParam {
    #[default]
    Variance,
    Stddev,
}

/// `X ~ Unif[0, 2]`, `Y = βX + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataGenConfig {
    pub n_off: usize,
    pub n_on: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub noise_param: NoiseParam,
}

fn default_beta() -> f64 {
    1.0
}

impl DataGenConfig {
    pub fn new(n_off: usize, n_on: usize) -> Self {
        Self {
            n_off,
            n_on,
            beta: 1.0,
            noise: NoiseKind::default(),
            noise_param: NoiseParam::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_on == 0 {
            return Err(Error::Config("n_on must be at least 1".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        Ok(())
    }

    fn noise_sd(&self, x: f64) -> f64 {
        match (self.noise, self.noise_param) {
            (NoiseKind::HeteroscedasticHalfX, NoiseParam::Variance) => (x / 2.0).sqrt(),
            (NoiseKind::HeteroscedasticHalfX, NoiseParam::Stddev) => x / 2.0,
        }
    }
}

/// RNG for one replicate: ChaCha8 keyed by the experiment seed, with the
/// replicate index as the stream id.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Draws the offline block, then the online block; each observation draws
/// its feature and then one standard normal.
pub fn generate_dataset<R: Rng + ?Sized>(cfg: &DataGenConfig, rng: &mut R) -> Stream {
    let mut draw = |n: usize| -> Vec<Observation> {
        (0..n)
            .map(|_| {
                let x = 2.0 * rng.random::<f64>();
                let z: f64 = rng.sample(StandardNormal);
                Observation {
                    x,
                    y: cfg.beta * x + cfg.noise_sd(x) * z,
                }
            })
            .collect()
    };
    let offline = draw(cfg.n_off);
    let online = draw(cfg.n_on);
    Stream { offline, online }
}
