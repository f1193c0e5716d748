//! Closed-loop optimization of instruction-tuning corpora.
//!
//! The pipeline scores every sample in a corpus with three model-derived
//! signals (training-loss trajectory, embedding-space isolation, and judged
//! response quality), selects outliers against dynamic thresholds, rewrites
//! or extends the selected samples through a generation endpoint, and folds
//! the results back into the corpus for the next round. Each iteration leaves
//! a complete audit trail on disk: signal snapshots, the selection report,
//! raw model replies, the updated corpus, and a manifest.
//!
//! The crate is organized around that flow:
//!
//! * [`corpus`] models the dataset and its on-disk JSONL layout
//! * [`gateway`] talks to OpenAI-compatible endpoints, with caching, retries,
//!   an in-flight bound, and a deterministic mock backend
//! * [`signals`] acquires the three per-sample signals from files or live
//!   endpoints
//! * [`selector`] turns signal distributions into thresholds and id sets
//! * [`refinery`] builds rewrite prompts, parses replies, and regenerates
//!   samples
//! * [`pipeline`] chains whole iterations and writes run artifacts
//! * [`report`] summarizes runs as histograms, densities, and tables

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod fsio;
pub mod gateway;
pub mod hashing;
pub mod pipeline;
pub mod refinery;
pub mod report;
pub mod selector;
pub mod signals;

pub use error::{Error, GatewayError, Result};
