//! Query-conditional zero-shot entity extraction for form-like documents.
//!
//! A tagger reads `[schema prompt ; entity prompt ; document]` and labels
//! every document token with one of five span labels, so the output layer
//! never depends on how many entity types exist. It is pre-trained on
//! weakly-labeled web pages (host name as schema, class/id paths as entity
//! types), fine-tuned with a learned schema prompt on one annotated document
//! type, and evaluated zero-shot on another.

pub mod boise;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod miner;
pub mod pipeline;
pub mod query;
pub mod synthetic;
pub mod tagger;
pub mod trainer;

pub use error::{Error, Result};
