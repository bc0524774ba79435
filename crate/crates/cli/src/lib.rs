//! Orchestration of instrumented training runs: the `run`, `convert`,
//! `replay` and `prune` subcommands of the `insitu` binary, as a library.

pub mod book;
pub mod config;
pub mod convert;
pub mod export;
pub mod replay;
pub mod run;
pub mod views;

pub use config::{DatasetSource, FilterCopy, PruneMode, RunConfig};
pub use convert::convert;
pub use export::prune_snapshot;
pub use replay::{replay, NoViewer, Replay, ReplayOptions, ReplayReport};
pub use run::{run, Run, RunSummary};
