//! Word-embedding training, model files and the per-row attribute cache.

pub mod cache;
pub mod config;
pub mod io;
pub mod model;
pub mod train;
pub mod vocab;

pub use cache::{build_row_attribute_cache, RowAttributeCache, RowVectors};
pub use config::{Architecture, TrainingConfig};
pub use io::{load_model, save_model, ModelFormat};
pub use model::{EmbeddingModel, OovPolicy, SENTINEL};
pub use train::{sentence_contexts, train, train_incremental, ContextRule};
pub use vocab::{build_vocab, Vocab};
