//! Experiment harness around `jes-core`: batch runs, the moment-matching
//! approximation study and result summaries.

pub mod config;
pub mod experiment;
pub mod study;
pub mod summary;
