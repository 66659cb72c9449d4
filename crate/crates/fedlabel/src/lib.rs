//! Deterministic simulator of federated learning with heterogeneous labels,
//! models, and data distributions across clients.
//!
//! The protocol exchanges per-sample class scores instead of model weights.
//! Each round a client rebuilds its model by distilling the server's global
//! score table down to its own label subset, fine-tunes on the private shard
//! that arrived this round, and submits fresh scores over a shared public
//! dataset. The server aggregates submissions label-wise, weighting
//! overlapping labels by per-label accuracy and unique labels by 1.
//!
//! Module map:
//! - [`nn`] — minimal dense/conv1d network engine with manual backprop,
//!   Adam, and early stopping
//! - [`data`] — accelerometer preprocessing (windowing, decimation, Haar
//!   features), CSV ingestion, synthetic non-IID generation, partitioning
//! - [`distill`] — client-side model distillation from global scores
//! - [`federation`] — score submissions, beta weights, label-wise
//!   aggregation, the round driver
//! - [`harness`] — config files, experiment loop, reports, CLI
//!
//! With the default `parallel` feature the per-client work inside a round
//! runs on a rayon pool; disabling the feature leaves a sequential build
//! with identical results.

pub mod data;
pub mod distill;
pub mod error;
pub mod exec;
pub mod federation;
pub mod harness;
pub mod matrix;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::Matrix;
