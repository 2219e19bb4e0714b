//! Label-free estimation of how well a trained temporal graph model will rank
//! node affinities (NDCG@k) on unseen, time-shifted test windows.
//!
//! The pipeline simulates shifted graphs from the tail of the training window,
//! labels them with the frozen model's own NDCG, turns embedding discrepancies
//! against the training graph into feature matrices, and fits a small
//! transformer regressor that maps discrepancies to NDCG.

// Negated comparisons are used deliberately so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dgnn;
pub mod discrepancy;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod seeds;
pub mod simulation;
pub mod temporal_graph;

pub use error::{Error, Result};
pub use temporal_graph::{EdgeEvent, EdgeStream, GraphSlice, UnlabeledSlice};
