//! Benchmark harness: query logs, synthetic workloads, replay and sweeps,
//! plus the `sparqlcache` command line.

pub mod cli;
pub mod experiment;
pub mod log;
pub mod replay;
pub mod workload;

pub use log::{LogEntry, QueryLog, SplitRule};
pub use replay::{replay, Mode, ReplayConfig, ReplayOutcome, ReplayReport, RunMetrics, TraceRow, TraceStatus};
pub use workload::{generate, WorkloadSpec};
