//! Online selective conformal inference.
//!
//! Decision-driven selection rules decide, one time step at a time, whether
//! a prediction interval is reported for the incoming feature. Calibration
//! selection strategies then choose which past points calibrate the
//! interval. The crate provides the rules, the strategies, the online
//! procedure, LORD-CI and ACI baselines, FCR accounting, a Monte Carlo
//! harness, and a brute-force symmetry oracle for small instances.

pub mod baselines;
pub mod conformal;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod selection;
pub mod sim;
pub mod strategies;

pub use conformal::{
    build_interval, conformal_p_value, conformal_threshold, empirical_quantile, Interval, Level,
    Observation, PValue, Radius, ScoreFunction,
};
pub use engine::{
    run_methods, run_stream, BaselineConfig, EngineSettings, Method, Protocol, StepRecord, Stream,
    Trajectory,
};
pub use error::{Error, Result};
pub use selection::{RuleFamily, RuleLedger, RuleSpec, SelectionRule};
pub use strategies::{select_calibration, CalibrationSet, StrategyKind};
