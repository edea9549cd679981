//! Harvest image-text training data from a knowledge graph.
//!
//! The pipeline walks a knowledge graph's class hierarchy to enumerate visual
//! entities, asks LLM backends for visual attributes and natural types, turns
//! all of it into image-search queries, downloads and curates the results, and
//! writes provenance-rich manifests. A text-label sampler and a zero-shot
//! evaluation harness operate on the resulting dataset.
//!
//! Each stage lives in its own module and communicates through JSON Lines
//! manifests; see the runnable programs under `examples/`.

pub mod attrs;
pub mod config;
pub mod curate;
pub mod error;
pub mod eval;
pub mod harvest;
pub mod http;
pub mod jsonl;
pub mod kg;
pub mod llm;
pub mod mock;
pub mod pipeline;
pub mod query;
pub mod ratelimit;
pub mod sampler;
pub mod search;
pub mod store;
pub mod text;

pub use error::{Error, Result};
