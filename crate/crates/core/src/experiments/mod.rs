//! Reproduction harness: configuration, exact solutions, convergence and
//! conservation runs, and CSV/JSON output.

pub mod config;
pub mod exact;
pub mod harness;
pub mod output;

pub use config::{Config, ConfigError, DtRule, ProblemId, XiPhase};
pub use exact::{fornberg, l2_error, Experiment};
