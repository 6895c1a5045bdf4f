//! Membership inference from input loss curvature.
//!
//! The crate trains small tanh MLP classifiers and shadow ensembles, estimates
//! the trace of the input Hessian of the per-example loss (zero-order and
//! gradient-based estimators), turns per-example score distributions into
//! membership scores, and evaluates the resulting attacks. The [`theory`]
//! module evaluates the KL-divergence bounds that relate curvature-based
//! distinguishability to the privacy parameter and the training set size.

pub mod attack;
pub mod curvature;
pub mod data;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
