//! Benchmark harness for `adaptivepq`: multi-phase workload runs,
//! training-data generation and output files. The `bench` binary wraps it.

pub mod grid;
pub mod phases;
pub mod plot;
pub mod run;
pub mod training;

pub use grid::{GridPoint, GridSpec};
pub use phases::{load_phases, WorkloadPhase};
pub use run::{run, Impl, RunConfig, RunResult};
