//! Error type shared by every module in the numeric core.
//!
//! All fallible operations return [`CoreError`] so that callers can match on
//! the failure class (shape mismatch, configuration, capacity, ...) instead of
//! parsing strings. Every variant carries enough context to identify the
//! failing operation without a debugger.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Result alias used throughout the core crate.
pub type Result<T> = core::result::Result<T, CoreError>;

/// Failure classes raised by the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes are incompatible with the requested operation.
    /// `op` names the failing stage (e.g. `"matmul"`, `"bridge.zero_conv"`).
    Shape { op: &'static str, detail: String },
    /// A configuration value is outside its documented range.
    Config(String),
    /// A fixed capacity was exceeded (e.g. sequence longer than the
    /// positional-encoding table).
    Capacity(String),
    /// A parameter name was registered twice.
    DuplicateName(String),
    /// A parameter name was looked up but never registered.
    UnknownName(String),
    /// A freeze/unfreeze pattern matched no parameters.
    EmptyFreezeMatch(String),
    /// An adapter slot that is already occupied was inserted into again.
    AdapterOccupied(&'static str),
    /// A classification target index is outside the class range.
    InvalidTarget { index: usize, classes: usize },
    /// `backward` was invoked on a non-scalar output.
    NonScalarLoss(Vec<usize>),
    /// Scene generation could not place a glyph string within the retry budget.
    Placement { retries: usize },
    /// A loss or intermediate value became NaN/Inf; training must abort.
    NonFinite(&'static str),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            CoreError::Config(d) => write!(f, "invalid configuration: {d}"),
            CoreError::Capacity(d) => write!(f, "capacity exceeded: {d}"),
            CoreError::DuplicateName(n) => write!(f, "parameter name registered twice: {n}"),
            CoreError::UnknownName(n) => write!(f, "unknown parameter name: {n}"),
            CoreError::EmptyFreezeMatch(p) => {
                write!(f, "freeze pattern matched no parameters: {p}")
            }
            CoreError::AdapterOccupied(site) => {
                write!(f, "adapter site already occupied: {site}")
            }
            CoreError::InvalidTarget { index, classes } => {
                write!(f, "class target {index} out of range for {classes} classes")
            }
            CoreError::NonScalarLoss(shape) => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            CoreError::Placement { retries } => {
                write!(f, "could not place glyph string after {retries} retries")
            }
            CoreError::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for CoreError {}
