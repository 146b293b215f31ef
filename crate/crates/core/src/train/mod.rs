//! Optimization, evaluation, cross-validation, checkpoints, and the
//! gradient and latency suites.

pub mod bench;
pub mod checkpoint;
pub mod crossval;
pub mod gradsuite;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use crossval::{cross_validate, folds, CrossValReport, FoldResult};
pub use metrics::{Confusion, FoldSummary, LatencyStats, MeanStd, MetricsReport};
pub use optim::{Adam, AdamConfig};
pub use trainer::{evaluate, train, train_fusion_from_scratch, Evaluation, History, TrainConfig};
