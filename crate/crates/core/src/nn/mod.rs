//! Parametric layers built on the tape.

mod aggregate;
mod attention;
mod check;
mod dropout;
mod graph;
mod gru;
mod linear;
mod params;

pub use aggregate::ViewAggregator;
pub use attention::MultiHeadAttention;
pub use check::check_params;
pub use dropout::Dropout;
pub use graph::{Graph, Mode, ParamGrads};
pub use gru::Gru;
pub use linear::{Activation, Linear};
pub use params::{uniform_init, Param, ParamId, ParamStore};
