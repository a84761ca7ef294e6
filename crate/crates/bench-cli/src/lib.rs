//! Benchmark harness for sliding-window matrix sketches.
//!
//! The library side exposes [`run::run_stream`] (replay a stream through
//! one algorithm against the exact oracle) and [`report::emit_report`];
//! the `winsketch-bench` binary wraps them in a CLI.

pub mod report;
pub mod run;
