//! Noise-robust teacher-student speech representation pre-training.
//!
//! The student encodes a noisy waveform, the EMA teacher encodes the clean
//! one, and the student is trained to regress the teacher's averaged
//! top-layer targets while contrasting them against a negative pool built
//! from ordinary frames and patch-shuffled frames, optionally pruned to the
//! hardest negatives.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod context;
pub mod ema;
pub mod encoder;
pub mod error;
pub mod model;
pub mod negatives;
pub mod numeric;
pub mod objectives;
pub mod selfcheck;
pub mod signal;
pub mod train;

pub use context::{LayerOutputs, MaskSpec, TransformerConfig};
pub use ema::{EmaSchedule, ParameterSet};
pub use encoder::{ConvSpec, FeatureSequence};
pub use error::{Error, Result};
pub use model::ModelConfig;
pub use negatives::{NegativePool, PatchSpec, Provenance};
pub use numeric::{Matrix, Precision, SeededRng};
pub use objectives::{Ablation, LossConfig, StepLossReport};
pub use signal::{NoiseKind, Waveform};
pub use train::{Checkpoint, CollapseReport, TrainConfig};
