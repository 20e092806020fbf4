//! Robust multilevel semantic hashing for cross-modal retrieval.
//!
//! The crate is organised as a file-based pipeline:
//!
//! * [`bounds`]: effective range of the robust margin δ from label statistics,
//!   with exhaustive coding-theory oracles for small code lengths.
//! * [`data`]: labels, features, multilevel similarity, triplet sampling and a
//!   synthetic generator.
//! * [`model`]: image/text hashing heads, the pseudo-code fusion layers and the
//!   shared classifier, with hand-derived gradients.
//! * [`objective`]: margin-adaptive triplet, weighted classification and
//!   quantization losses.
//! * [`trainer`]: alternating Adam / closed-form code updates.
//! * [`index`]: packed codes and exact Hamming top-k search.
//! * [`eval`]: NDCG@p and precision-recall.
//!
//! Batch work fans out over rayon when the `parallel` feature is on (the
//! default); see [`Exec`].

mod binio;
pub mod bounds;
pub mod data;
pub mod error;
pub mod eval;
mod exec;
pub mod index;
pub mod model;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
