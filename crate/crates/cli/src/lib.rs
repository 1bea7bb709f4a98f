//! Experiment harness: configuration, per-seed drivers, traces, fitting.

pub mod config;
pub mod experiment;
pub mod fit;
pub mod trace;
