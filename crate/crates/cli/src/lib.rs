//! Experiment harness behind the `bsl` binary: configuration, the run and
//! validate pipelines, and result summaries.

pub mod config;
pub mod pipeline;
pub mod report;
