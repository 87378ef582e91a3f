//! Deterministic, dependency-light core for toy text spotting: an `f64`
//! reverse-mode autodiff tape, small convolutional/transformer building
//! blocks, a frozen-model bridging module with residual adapters, synthetic
//! glyph-scene generation, and the evaluation math that compares them.
//!
//! The crate is `no_std` (with `alloc`) so the numerical substance stays
//! separable from file formats, CLIs, and clocks, which live in the
//! companion binary crate.

#![cfg_attr(not(any(test, feature = "testutil")), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod boxes;
pub mod bridge;
pub mod datasynth;
pub mod error;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod spotter;
pub mod tensor;

#[cfg(any(test, feature = "testutil"))]
pub mod check;

pub use autodiff::{Tape, Var};
pub use error::{CoreError, Result};
pub use tensor::Tensor;
