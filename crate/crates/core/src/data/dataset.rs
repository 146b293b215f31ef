//! In-memory clips and datasets.

use serde::{Deserialize, Serialize};

use super::behavior::{BehaviorState, FrameFeatures};
use super::render::{CHANNELS, VIEWS};
use super::rule::{Label, RuleConfig};
use crate::config::{BODY_DIM, HAND_DIM, HEAD_DIM};
use crate::error::{Error, Result};
use crate::feature::FeatureStreams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One annotated clip: rendered views, per-frame features, and the label of
/// its final frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub clip_id: String,
    pub fps: u32,
    /// `[V, N, 3, W, H]`
    pub frames: Tensor,
    pub features: Vec<FrameFeatures>,
    pub label: Label,
    pub split: Split,
    /// Ground-truth latent state per frame, for diagnostics only.
    pub state_trace: Vec<BehaviorState>,
}

impl ClipSample {
    pub fn n_frames(&self) -> usize {
        self.features.len()
    }

    /// Raw streams of this clip with batch extent 1.
    pub fn streams(&self) -> Result<FeatureStreams> {
        let n = self.features.len();
        let mut head = Vec::with_capacity(n * HEAD_DIM);
        let mut body = Vec::with_capacity(n * BODY_DIM);
        let mut hands = Vec::with_capacity(n * HAND_DIM);
        for f in &self.features {
            head.extend_from_slice(&f.head);
            body.extend_from_slice(&f.body);
            hands.extend_from_slice(&f.left);
            hands.extend_from_slice(&f.right);
        }
        let mut s = FeatureStreams::new(
            Tensor::new(&[1, n, HEAD_DIM], head)?,
            Tensor::new(&[1, n, BODY_DIM], body)?,
            Tensor::new(&[1, n, HAND_DIM], hands)?,
        )?;
        s.objects = Some(vec![self.features.iter().map(|f| f.objects.clone()).collect()]);
        Ok(s)
    }

    /// Checks shapes against the feature records and the label against `rule`.
    pub fn validate(&self, rule: &RuleConfig) -> Result<()> {
        let s = self.frames.shape();
        if s.len() != 5 || s[0] != VIEWS || s[1] != self.features.len() || s[2] != CHANNELS {
            return Err(Error::Format(format!(
                "clip {}: frames {s:?} do not match {} feature records",
                self.clip_id,
                self.features.len()
            )));
        }
        if self.state_trace.len() != self.features.len() {
            return Err(Error::Format(format!("clip {}: state trace length differs", self.clip_id)));
        }
        let relabel = rule.label(&self.features)?;
        if relabel != self.label {
            return Err(Error::Format(format!(
                "clip {}: stored label {} disagrees with the readiness rule",
                self.clip_id,
                self.label.as_str()
            )));
        }
        Ok(())
    }
}

/// Dataset-wide generation settings recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub fps: u32,
    pub frames: usize,
    pub frame_size: usize,
    pub views: usize,
    pub rule: RuleConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub clips: Vec<ClipSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label.index()).collect()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.clips.len()).filter(|&i| self.clips[i].split == split).collect()
    }

    pub fn ready_fraction(&self) -> f64 {
        let ready = self.clips.iter().filter(|c| c.label == Label::Ready).count();
        ready as f64 / self.clips.len().max(1) as f64
    }
}

/// Fills frames flagged invalid with the nearest earlier valid frame (the
/// first valid frame for a leading gap). Validity flags are kept.
pub fn densify(frames: &mut [FrameFeatures]) -> Result<()> {
    let first = frames
        .iter()
        .position(|f| f.valid)
        .ok_or_else(|| Error::Format("clip has no valid frame".into()))?;
    let mut last = frames[first].clone();
    for f in frames.iter_mut() {
        if f.valid {
            last = f.clone();
        } else {
            f.head = last.head;
            f.body = last.body;
            f.left = last.left;
            f.right = last.right;
            f.objects = last.objects.clone();
        }
    }
    Ok(())
}
