//! Scenario files, the attack matrix, latency bench and report rendering.

pub mod bench;
pub mod config;
pub mod matrix;
pub mod report;

pub use bench::{bench, BenchReport};
pub use config::{ConfigError, ScenarioConfig};
pub use matrix::{classify, golden, run_cell, run_matrix, Cell, Outcome, ScenarioReport};
pub use report::{render_bench, render_report, render_trace, Format};
