//! Embedding-augmented relational query engine.

pub mod ann;
pub mod embedding;
pub mod error;
pub mod model_store;
pub mod parallel;
pub mod query;
pub mod table;
pub mod textify;
pub mod udf;

pub use error::{Error, ErrorClass, Result};
pub use parallel::Parallelism;
