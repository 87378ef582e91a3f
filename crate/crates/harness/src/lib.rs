//! Training, evaluation, and comparison harness around the numeric core:
//! staged training with checkpoints, paradigm comparison, ablations, and
//! deterministic CSV/JSON reporting. Everything that needs files, clocks, or
//! a command line lives here; the math lives in `glyphspot-core`.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod pipeline;
pub mod report;
pub mod stages;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
