//! Continuous tests on the evidence scale.
//!
//! A level-`alpha` continuous test is a statistic with values in
//! `[0, 1/alpha]` whose expectation under the null is at most one. Level 0
//! recovers e-values; tests that only take the values 0 and `1/alpha` are
//! classical binary tests. This crate builds expected-utility optimal tests
//! for simple and finite composite nulls, the Gaussian location model,
//! sequential test martingales, and the conversions to and from p-values.

pub mod bridge;
pub mod composite_opt;
pub mod error;
pub mod evidence;
pub mod ext_float;
pub mod gaussian;
pub mod lp;
pub mod mc;
pub mod measure;
pub mod normal;
pub mod quadrature;
pub mod sequential;
pub mod simple_opt;
pub mod utility;

pub use error::{ErrorCategory, EtestError, Result};
pub use evidence::{ContinuousTest, Level};
pub use measure::{FiniteDistribution, FiniteMeasure, GaussianLocation};
pub use utility::{Utility, UtilitySpec};
