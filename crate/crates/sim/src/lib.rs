//! Closed-loop simulation of the balloon-popping multirotor.
//!
//! [`run`] ties the synthetic world to the perception, filtering, planning
//! and mission code of `popper-core` and returns a trace of everything that
//! happened.

pub mod config;
pub mod run;
pub mod sensors;
pub mod trace;
pub mod world;

pub use config::{ConfigError, SimConfig};
pub use run::{run, SimTrace};
pub use trace::{summarize, RunSummary, TraceEvent};
