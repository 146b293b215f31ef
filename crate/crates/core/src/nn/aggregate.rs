use rand::Rng;

use super::graph::Graph;
use super::params::{uniform_init, ParamId, ParamStore};
use crate::config::Aggregation;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Tensor, Var};

/// Reduces the camera-view axis of `[S, V, d]` to `[S, d]`.
#[derive(Clone, Debug)]
pub enum ViewAggregator {
    /// Mean over views.
    Gap,
    /// Convex combination; weights are the softmax of `V` free logits.
    WeightedSum { logits: ParamId, views: usize },
    /// Valid convolution across views with a `[k, d, d]` kernel and no bias.
    Conv1d { kernel: ParamId, k: usize, d: usize },
}

impl ViewAggregator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: Aggregation,
        views: usize,
        d_model: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        match kind {
            Aggregation::Gap => Ok(Self::Gap),
            Aggregation::Ws => {
                let logits = store.add(format!("{name}.logits"), Tensor::zeros(&[views]))?;
                Ok(Self::WeightedSum { logits, views })
            }
            Aggregation::Conv1d => {
                if views < kernel_size {
                    return Err(Error::Config(format!(
                        "Conv1D aggregation needs at least {kernel_size} views, got {views}"
                    )));
                }
                let kernel = store.add(
                    format!("{name}.kernel"),
                    uniform_init(&[kernel_size, d_model, d_model], kernel_size * d_model, rng),
                )?;
                Ok(Self::Conv1d {
                    kernel,
                    k: kernel_size,
                    d: d_model,
                })
            }
        }
    }

    pub fn kind(&self) -> Aggregation {
        match self {
            Self::Gap => Aggregation::Gap,
            Self::WeightedSum { .. } => Aggregation::Ws,
            Self::Conv1d { .. } => Aggregation::Conv1d,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::Gap => 0,
            Self::WeightedSum { views, .. } => *views,
            Self::Conv1d { k, d, .. } => k * d * d,
        }
    }

    /// Normalized view weights for the weighted-sum variant.
    pub fn effective_weights(&self, store: &ParamStore) -> Option<Vec<f64>> {
        let Self::WeightedSum { logits, .. } = self else { return None };
        let z = store.value(*logits).data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        Some(e.iter().map(|v| v / sum).collect())
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(shape_err("aggregate_views", format!("input {shape:?} is not [S, V, d]")));
        }
        match self {
            Self::Gap => g.mean(x, 1),
            Self::WeightedSum { logits, .. } => {
                let z = g.param(*logits);
                let w = g.softmax(z, 0)?;
                g.weighted_sum(x, w, 1)
            }
            Self::Conv1d { kernel, k, .. } => {
                if shape[1] < *k {
                    return Err(Error::Config(format!(
                        "Conv1D aggregation needs at least {k} views, got {}",
                        shape[1]
                    )));
                }
                let kv = g.param(*kernel);
                let y = g.conv1d(x, kv)?;
                if shape[1] == *k {
                    g.reshape(y, &[shape[0], shape[2]])
                } else {
                    // more views than taps: average the remaining positions
                    g.mean(y, 1)
                }
            }
        }
    }
}
