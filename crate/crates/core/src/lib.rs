//! Driver take-over readiness classification from multi-view video and
//! extracted pose/hand features.
//!
//! The crate is self-contained: a small reverse-mode autodiff core
//! ([`tensor`]), parametric layers ([`nn`]), the context, feature and fusion
//! blocks, a deterministic synthetic scenario generator ([`data`]), and the
//! training / cross-validation harness ([`train`]).

pub mod audit;
pub mod config;
pub mod context;
pub mod data;
mod error;
pub mod feature;
pub mod fusion;
pub mod nn;
pub mod tensor;
pub mod train;

pub use config::{Aggregation, FusionStrategy, Modality, ModalitySet, ModelConfig, ModelKind, Regime};
pub use error::{Error, Result};
pub use fusion::Network;
pub use tensor::{Tape, Tensor, Var};
