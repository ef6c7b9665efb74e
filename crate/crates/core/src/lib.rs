//! Causal estimation for hierarchical (prioritized multivariate) outcomes.
//!
//! The crate provides win proportion / win ratio / net benefit estimators
//! under several pairing schemes, propensity-weighted, distributional
//! regression and doubly robust estimators of the individual-level
//! identifiable estimand, confidence intervals, and a simulation harness
//! with exact or Monte-Carlo oracles.

pub mod error;
pub mod estimators;
pub mod inference;
pub mod model;
pub mod nuisance;
pub mod pairing;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
