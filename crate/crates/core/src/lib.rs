//! Metric-learning re-identification toolkit.
//!
//! Works on embedding vectors produced by any external feature extractor:
//! crop preprocessing, identity-balanced PK batches, hard and semi-hard
//! triplet mining, projection-head training with a triplet margin loss, and
//! the closed-world query/gallery evaluation protocol with cross-condition
//! and error analysis.

pub mod cli;
pub mod error;
pub mod evaluator;
pub mod mining;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod store;
pub mod synthetic;
pub mod trainer;

pub use error::{ReidError, Result};
pub use model::{Arrangement, Condition, EmbeddingRecord, EmbeddingSet, Split, Viewpoint};
pub use rng::RngStream;
