//! Synthetic driver scenarios, the readiness labelling rule, file formats,
//! and batching.

pub mod batch;
pub mod behavior;
pub mod dataset;
pub mod format;
pub mod render;
pub mod rule;
pub mod synth;

pub use batch::Batch;
pub use behavior::{BehaviorState, FrameFeatures, MarkovChain};
pub use dataset::{densify, ClipSample, Dataset, DatasetMeta, Split};
pub use format::{read_dataset, read_features, write_dataset, write_features};
pub use rule::{Label, RuleConfig};
pub use synth::{generate_clip, generate_dataset, SynthConfig};
