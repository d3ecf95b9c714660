//! Token clustering, relation-graph projection and benchmark tooling for
//! multimodal emotion understanding.
//!
//! The numeric side consumes pre-extracted encoder token tensors
//! ([`token_model`]) and produces projected visual features
//! ([`projection_pipeline`]). The text side builds benchmark instructions,
//! manages chain-of-thought exemplars and scores predictions.

pub mod density_peaks;
pub mod emoprompt_store;
pub mod error;
pub mod eval_harness;
pub mod instruction_builder;
pub mod projection_pipeline;
pub mod relation_graph;
pub mod text;
pub mod token_model;

pub use error::{Error, ErrorKind, Result};
