//! Experiment orchestration: dataset synthesis, training and distillation
//! drivers, analyses, persistence, and the pieces the CLI is built from.

pub mod analyze;
pub mod arrayio;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod pgm;
pub mod toy1d;
pub mod train;
pub mod wiener;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Task};
pub use dataset::{gen_data, load_dataset, save_dataset, Dataset};
pub use train::{load_model, stream_rng, train, TrainArtifacts};
