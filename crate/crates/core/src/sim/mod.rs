//! Synthetic data, experiment configuration, presets and the Monte Carlo
//! runner.

mod config;
mod data;
mod presets;
mod runner;

pub use config::{load_config, parse_config, ExperimentConfig, RuleConfig};
pub use data::{generate_dataset, replicate_rng, DataGenConfig, NoiseKind, NoiseParam};
pub use presets::{preset, preset_names, PresetInfo, PRESETS};
pub use runner::{
    ensure_writable, method_slug, run_experiment, write_csv, write_outputs, RunOutput, CSV_HEADER,
};
