//! Two-stage Bayesian dose-finding for first-in-human trials in healthy
//! volunteers when the dose-activity curve may reach a plateau.
//!
//! - [`model`]: the plateau model family, priors and subject records.
//! - [`inference`]: quadrature fits, model posterior, selection / averaging.
//! - [`design`]: start-up escalation, admissibility, allocation and stopping.
//! - [`simulation`]: scenarios, replicated trials, operating characteristics.

pub mod error;
pub mod inference;
pub mod math;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod design;
pub mod simulation;

pub use error::{Error, Result};
