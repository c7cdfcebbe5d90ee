//! Pool-based active learning over precomputed representations.
//!
//! Document representations are computed once by a frozen backbone and
//! stored as an [`EmbeddingMatrix`]. Every acquisition iteration refits a
//! cheap classifier on the labeled rows, scores the unlabeled pool with one
//! of eight acquisition functions, and labels the top batch. Only after the
//! labeling budget is spent is the expensive final model trained.

pub mod acquisition;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod protocol;
pub mod rng;

pub use acquisition::{AcquisitionContext, AcquisitionScore, Strategy};
pub use dataset::{DatasetManifest, EmbeddingMatrix, PoolState};
pub use error::{Error, Result};
pub use models::{Architecture, PredictiveSample, ProbeModel, TrainConfig};
pub use protocol::{FinalModel, Protocol, RunRecord, SessionConfig};
