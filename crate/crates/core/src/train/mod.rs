//! Training loop, configuration, checkpoints and diagnostics.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod optimizer;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{AdamConfig, DataConfig, LossSupport, Profile, TrainConfig};
pub use corpus::{Corpus, Pair};
pub use diagnostics::{collapse_metric, diagnose, similarity_histogram, CollapseReport, Histogram};
pub use optimizer::Adam;
pub use trainer::{run, train_step, RunSummary, StepRecord, TrainState, Trainer};
