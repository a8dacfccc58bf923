//! Negative-correlation ensemble classification on a minimal autodiff core.
//!
//! The ensemble softmax cross-entropy of a multi-head classifier decomposes
//! exactly into the mean of the per-head losses minus the Bregman information
//! of the heads' correct-class probabilities (the Jensen gap of `-log`).
//! Training each head on its own cross-entropy plus a signed multiple of the
//! Itakura-Saito divergence to the ensemble mean therefore interpolates
//! between fully independent heads (lambda = 0) and the exact ensemble
//! objective (lambda = -1), with the diversity credit under explicit control.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] — dense f64 tensors on a define-by-run reverse-mode tape,
//!   plus a central-difference gradient checker.
//! - [`bregman`] — generic Bregman divergence / Bregman information over
//!   discrete distributions, and the log-domain Itakura-Saito form.
//! - [`model`] — shared-backbone MLP ensemble with per-head feature slices,
//!   optional feature expansion, and per-head branch layers.
//! - [`loss`] — individual / ensemble cross-entropy, the per-head
//!   correlation-regularized loss, the exact decomposition, and the lambda
//!   schedule.
//! - [`diversity`] — pairwise classifier-weight diversity reports.
//! - [`data`] — IDX and CSV ingestion, synthetic Gaussian blobs,
//!   stratified 4:1 splits, seeded batch iteration.
//! - [`train`] — deterministic SGD-with-momentum training loop with
//!   step-decay learning rate, per-epoch metrics, and checkpointing.
//!
//! Everything is computed in f64: the decomposition identity is asserted to
//! 1e-9 during training and the crate's tests check it on random ensembles.

use thiserror::Error;

pub mod bregman;
pub mod checkpoint;
pub mod data;
pub mod diversity;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

/// Crate-wide error type.
///
/// Variants follow the failure categories of the public contracts: shape and
/// axis problems, convexity-domain violations, non-finite numerics, broken
/// caller contracts, invalid configurations, malformed files, and internal
/// consistency failures that indicate a bug rather than bad input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    /// An identity the implementation guarantees failed beyond tolerance.
    #[error("internal consistency error: {0}")]
    Inconsistency(String),

    #[error("degenerate weights: head {head} class {class} has a zero-norm weight vector")]
    DegenerateWeight { head: usize, class: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
