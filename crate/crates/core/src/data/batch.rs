//! Assembles model inputs from dataset clips.

use super::dataset::Dataset;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::feature::{FeatureStreams, NormStats};
use crate::fusion::Inputs;
use crate::tensor::Tensor;

/// Stacked inputs and labels for a set of clips.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `[B, V, N, 3, W, H]`
    pub clips: Option<Tensor>,
    /// Normalized streams.
    pub streams: Option<FeatureStreams>,
    pub labels: Vec<usize>,
}

/// Raw streams of the selected clips, e.g. for fitting normalization.
pub fn raw_streams(ds: &Dataset, indices: &[usize]) -> Result<FeatureStreams> {
    let parts = indices
        .iter()
        .map(|&i| ds.clips[i].streams())
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureStreams> = parts.iter().collect();
    FeatureStreams::stack(&refs)
}

/// Rejects datasets whose clip geometry differs from what `cfg` expects.
pub fn check_compatible(ds: &Dataset, cfg: &ModelConfig) -> Result<()> {
    let m = &ds.meta;
    if m.frames != cfg.frames {
        return Err(Error::Config(format!(
            "dataset clips have {} frames but the model expects {}",
            m.frames, cfg.frames
        )));
    }
    if cfg.uses_context() && (m.frame_size != cfg.frame_size || m.views != cfg.views) {
        return Err(Error::Config(format!(
            "dataset frames are {} views of {}x{} but the model expects {} views of {}x{}",
            m.views, m.frame_size, m.frame_size, cfg.views, cfg.frame_size, cfg.frame_size
        )));
    }
    Ok(())
}

impl Batch {
    /// Gathers `indices`. Frames are stacked only when `with_clips`; streams
    /// only when `norm` is given, and they are normalized with it.
    pub fn assemble(ds: &Dataset, indices: &[usize], with_clips: bool, norm: Option<&NormStats>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= ds.len()) {
            return Err(Error::Contract(format!("clip index {i} out of range for {} clips", ds.len())));
        }
        let clips = if with_clips {
            let frames: Vec<&Tensor> = indices.iter().map(|&i| &ds.clips[i].frames).collect();
            Some(Tensor::stack(&frames)?)
        } else {
            None
        };
        let streams = match norm {
            Some(n) => Some(n.normalize(&raw_streams(ds, indices)?)?),
            None => None,
        };
        Ok(Self {
            indices: indices.to_vec(),
            clips,
            streams,
            labels: indices.iter().map(|&i| ds.clips[i].label.index()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> Inputs<'_> {
        Inputs {
            clips: self.clips.as_ref(),
            streams: self.streams.as_ref(),
            ..Inputs::default()
        }
    }
}
