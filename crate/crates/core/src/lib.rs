//! Extractive summarization of long, sectioned documents with a contrastive
//! hierarchical graph-attention network.
//!
//! The pipeline: [`corpus`] loads sectioned documents, [`oracle`] builds
//! greedy ROUGE labels, [`graph`] turns each document into a
//! sentence/section/document graph with initial node features, [`model`]
//! scores sentences, [`trainer`] fits the model with [`autodiff`], and
//! [`eval`] extracts summaries and reports [`rouge`] scores.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod rouge;
pub mod trainer;

pub use error::{Error, Result};
