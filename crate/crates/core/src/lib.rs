//! Planning and data-engineering toolkit for multilingual LLM pretraining.
//!
//! The crate is split by concern:
//!
//! - [`scaling_law`]: fit and query the joint multilingual loss law
//!   `L(N, p) = f(p)·β·N^(−α) + L∞`.
//! - [`mixture`]: turn a token budget and per-language availability into a
//!   two-phase (main + annealing) allocation with epoch accounting.
//! - [`corpus`]: streaming document and sentence-pair filters
//!   (dedup, language id, perplexity, heuristics, score thresholds).
//! - [`tokenizer`]: byte-fallback BPE training, encoding, fertility and
//!   chat formatting with loss masks.
//! - [`train_plan`]: parameter counts and learning-rate schedules.
//! - [`config`] and [`report`]: shared run configuration and stable output
//!   formats used by the command-line front end.

pub mod config;
pub mod corpus;
mod delimited;
pub mod error;
pub mod mixture;
pub mod report;
pub mod scaling_law;
pub mod tokenizer;
pub mod train_plan;

pub use error::{Error, Result};
