//! Explainable predictive process monitoring.
//!
//! The crate trains a feedforward binary classifier on encoded event-log
//! prefixes, identifies local regions by clustering the network's
//! last-hidden-layer activations over the validation set, fits one
//! comprehensible regression tree per region against the black-box scores,
//! and emits per-instance explanations (decision path, rule with confidence,
//! local fidelity R²) together with the full evaluation suite.
//!
//! Data-parallel inner loops (instance encoding, scoring, clustering
//! restarts, per-cluster surrogate fits) run on rayon when the default
//! `parallel` feature is enabled and fall back to sequential loops without
//! it; results are bitwise identical either way.

pub mod encoding;
pub mod error;
pub mod event_log;
pub mod exec;
pub mod local_regions;
pub mod metrics;
pub mod neural_net;
pub mod pipeline;
pub mod simlog;
pub mod surrogate;

pub use error::{Error, Result};
