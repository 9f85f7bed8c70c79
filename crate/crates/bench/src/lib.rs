//! Criterion benchmarks for the calibration strategies and the stream engine.
