//! Classifiers trained inside and after the acquisition loop.

mod checkpoint;
mod mc;
mod network;
mod train;

pub use mc::PredictiveSample;
pub use network::{softmax_inplace, softmax_rows_inplace, Architecture, Dense, ProbeModel};
pub use train::{select_rows, train, train_probe, TrainConfig, TrainReport};
