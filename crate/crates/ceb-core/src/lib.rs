//! Conditional Entropy Bottleneck training, evaluation and robustness
//! benchmarking at desk scale.
//!
//! The crate trains small stochastic classifiers whose representation is a
//! unit-variance Gaussian around an encoder output, with the rate penalty
//! weighted either against a learned class-conditional marginal (CEB) or an
//! unconditional marginal (VIB). Around that core it provides PGD attacks,
//! a common-corruptions harness with mCE-style aggregation, an exact
//! discrete-information probe, and a config-driven experiment layer with
//! reproducible artifacts.

pub mod attacks;
pub mod ceb;
pub mod checkpoint;
pub mod config;
pub mod corruptions;
pub mod data;
pub mod distributions;
pub mod error;
pub mod infoprobe;
pub mod models;
pub mod robustness;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
