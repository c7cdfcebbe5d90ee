//! Embedding and manifest files, pool bookkeeping, synthetic data and the
//! benchmark-mode label oracle.

mod embeddings;
mod manifest;
mod pool;
mod synthetic;

pub use embeddings::{load_embeddings, save_embeddings, EmbeddingMatrix, HEADER_LEN, MAGIC, VERSION};
pub use manifest::{DatasetManifest, UNKNOWN_LABEL};
pub use pool::{init_pool, oracle_label, Acquisition, PoolState};
pub use synthetic::{generate_synthetic, SyntheticSpec};
