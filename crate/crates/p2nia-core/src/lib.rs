//! Core library for P2NIA, a privacy-preserving and non-interactive fairness
//! audit protocol between a platform (which holds a model and labelled audit
//! data) and an external auditor (which must not learn individual records).
//!
//! The flow is a single request/release exchange:
//!
//! 1. the auditor sends an [`protocol::AuditRequest`] naming a protected
//!    attribute, a sample size and a privacy budget;
//! 2. the platform labels its audit data with the model under audit;
//! 3. the platform privatizes the labelled data, either by per-column
//!    randomized response ([`mechanisms::grr_perturb`]) or by fitting and
//!    sampling a noisy generative model ([`synth`]);
//! 4. the platform publishes the privatized rows plus the mechanism
//!    parameters as an [`protocol::AuditRelease`];
//! 5. the auditor computes debiased group-fairness metrics from the release
//!    ([`protocol::auditor_evaluate`]), spending no additional budget.
//!
//! Everything downstream of a seed is deterministic: given the same inputs
//! and the same seed, every function in this crate reproduces its output
//! byte for byte.

pub mod bias;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod seed;
pub mod synth;
pub mod table;

pub use error::{Error, Result};
