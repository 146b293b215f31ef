//! Extracted-feature pathway: per-stream FCL and GRU, concatenation,
//! self-attention with a residual layer norm, and an aligning FCL.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Modality, ModalitySet, ModelConfig, LN_EPS};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, Graph, Gru, Linear, MultiHeadAttention, ParamStore};
use crate::tensor::{Tensor, Var};

/// One detected object: top-left and bottom-right corners `[x_t, y_t, x_b, y_b]`.
pub type ObjectBox = [f64; 4];

/// Per-frame feature streams for a batch of clips.
///
/// `head [B, N, 3]` holds yaw, pitch, roll in degrees, `body [B, N, 34]` the
/// 17 (x, y) keypoints, `hands [B, N, 8]` the left then right box. Objects
/// are carried along for completeness; no layer reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStreams {
    pub head: Tensor,
    pub body: Tensor,
    pub hands: Tensor,
    pub objects: Option<Vec<Vec<Vec<ObjectBox>>>>,
    pub normalized: bool,
}

impl FeatureStreams {
    pub fn new(head: Tensor, body: Tensor, hands: Tensor) -> Result<Self> {
        let s = Self {
            head,
            body,
            hands,
            objects: None,
            normalized: false,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let lead = |t: &Tensor, d: usize| -> Result<(usize, usize)> {
            match t.shape() {
                [b, n, w] if *w == d => Ok((*b, *n)),
                s => Err(shape_err("feature_streams", format!("stream {s:?} is not [B, N, {d}]"))),
            }
        };
        let a = lead(&self.head, Modality::Head.input_dim())?;
        let b = lead(&self.body, Modality::Body.input_dim())?;
        let c = lead(&self.hands, Modality::Hand.input_dim())?;
        if a != b || a != c {
            return Err(shape_err(
                "feature_streams",
                format!("stream extents disagree: head {a:?}, body {b:?}, hands {c:?}"),
            ));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.head.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.head.shape()[1]
    }

    pub fn get(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Body => &self.body,
            Modality::Head => &self.head,
            Modality::Hand => &self.hands,
        }
    }

    fn get_mut(&mut self, m: Modality) -> &mut Tensor {
        match m {
            Modality::Body => &mut self.body,
            Modality::Head => &mut self.head,
            Modality::Hand => &mut self.hands,
        }
    }

    /// Stacks single-clip streams `[1, N, d]` (or `[N, d]`) along the batch axis.
    pub fn stack(items: &[&FeatureStreams]) -> Result<Self> {
        let first = items.first().ok_or_else(|| shape_err("feature_streams", "empty batch"))?;
        let cat = |m: Modality| -> Result<Tensor> {
            let parts: Vec<&Tensor> = items.iter().map(|s| s.get(m)).collect();
            Tensor::cat_first(&parts)
        };
        let objects = if items.iter().all(|s| s.objects.is_some()) {
            Some(items.iter().flat_map(|s| s.objects.clone().unwrap_or_default()).collect())
        } else {
            None
        };
        if items.iter().any(|s| s.normalized != first.normalized) {
            return Err(Error::Contract("cannot stack normalized with raw streams".into()));
        }
        let mut out = Self::new(cat(Modality::Head)?, cat(Modality::Body)?, cat(Modality::Hand)?)?;
        out.objects = objects;
        out.normalized = first.normalized;
        Ok(out)
    }
}

/// Mean and standard deviation per channel of one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl ChannelStats {
    fn fit(t: &Tensor) -> Self {
        let d = *t.shape().last().unwrap();
        let rows = t.numel() / d;
        let mut mean = vec![0.0; d];
        for row in t.data().chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; d];
        for row in t.data().chunks_exact(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / rows as f64).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    fn apply(&self, t: &mut Tensor, forward: bool) -> Result<()> {
        let d = *t.shape().last().unwrap();
        if d != self.mean.len() {
            return Err(shape_err(
                "normalize",
                format!("stats for {} channels applied to width {d}", self.mean.len()),
            ));
        }
        for row in t.data_mut().chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if forward { (*v - m) / s } else { *v * s + m };
            }
        }
        Ok(())
    }
}

/// Z-score statistics fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub head: ChannelStats,
    pub body: ChannelStats,
    pub hands: ChannelStats,
}

impl NormStats {
    pub fn fit(raw: &FeatureStreams) -> Result<Self> {
        if raw.normalized {
            return Err(Error::Contract("statistics must be fitted on raw streams".into()));
        }
        Ok(Self {
            head: ChannelStats::fit(&raw.head),
            body: ChannelStats::fit(&raw.body),
            hands: ChannelStats::fit(&raw.hands),
        })
    }

    fn stats(&self, m: Modality) -> &ChannelStats {
        match m {
            Modality::Body => &self.body,
            Modality::Head => &self.head,
            Modality::Hand => &self.hands,
        }
    }

    pub fn normalize(&self, raw: &FeatureStreams) -> Result<FeatureStreams> {
        if raw.normalized {
            return Err(Error::Contract("streams are already normalized".into()));
        }
        let mut out = raw.clone();
        for &m in Modality::ALL {
            self.stats(m).apply(out.get_mut(m), true)?;
        }
        out.normalized = true;
        Ok(out)
    }

    pub fn denormalize(&self, z: &FeatureStreams) -> Result<FeatureStreams> {
        if !z.normalized {
            return Err(Error::Contract("streams are not normalized".into()));
        }
        let mut out = z.clone();
        for &m in Modality::ALL {
            self.stats(m).apply(out.get_mut(m), false)?;
        }
        out.normalized = false;
        Ok(out)
    }
}

/// Layers applied to one active stream.
#[derive(Clone, Debug)]
pub struct StreamEncoder {
    pub modality: Modality,
    pub fcl: Linear,
    pub gru: Gru,
}

#[derive(Clone, Debug)]
pub struct FeatureBlock {
    pub streams: Vec<StreamEncoder>,
    pub attention: MultiHeadAttention,
    pub align: Linear,
    pub head: Option<Linear>,
    modalities: ModalitySet,
    frames: usize,
}

impl FeatureBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        with_head: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.modalities.is_empty() {
            return Err(Error::Config("modality set is empty".into()));
        }
        let mut streams = Vec::new();
        for m in cfg.modalities.iter() {
            let fcl = Linear::new(
                store,
                &format!("{name}.{m}.fcl"),
                m.input_dim(),
                cfg.fcl_dims.get(m),
                Activation::Relu,
                rng,
            )?;
            let gru = Gru::new(store, &format!("{name}.{m}.gru"), cfg.fcl_dims.get(m), cfg.gru_dims.get(m), rng)?;
            streams.push(StreamEncoder { modality: m, fcl, gru });
        }
        let width = cfg.feature_width();
        let attention = MultiHeadAttention::new(store, &format!("{name}.attn"), width, cfg.feature_heads, rng)?;
        let align = Linear::new(store, &format!("{name}.align"), width, cfg.d_model, Activation::Relu, rng)?;
        let head = if with_head {
            Some(Linear::new(
                store,
                &format!("{name}.head"),
                cfg.frames * cfg.d_model,
                2,
                Activation::Identity,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            streams,
            attention,
            align,
            head,
            modalities: cfg.modalities,
            frames: cfg.frames,
        })
    }

    pub fn modalities(&self) -> ModalitySet {
        self.modalities
    }

    pub fn param_count(&self) -> usize {
        self.streams
            .iter()
            .map(|s| s.fcl.param_count() + s.gru.param_count())
            .sum::<usize>()
            + self.attention.param_count()
            + self.align.param_count()
            + self.head.as_ref().map_or(0, Linear::param_count)
    }

    /// Concatenated GRU outputs `[B, N, Σ d_h]` in body, head, hand order.
    pub fn temporal(&self, g: &mut Graph, streams: &FeatureStreams) -> Result<Var> {
        if !streams.normalized {
            return Err(Error::Contract("feature streams must be normalized before the forward pass".into()));
        }
        let mut parts = Vec::with_capacity(self.streams.len());
        for s in &self.streams {
            let x = g.input(streams.get(s.modality).clone());
            let x = s.fcl.forward(g, x)?;
            parts.push(s.gru.forward(g, x)?);
        }
        g.concat(&parts, 2)
    }

    /// Normalized streams to X_feature `[B, N, d]`.
    pub fn forward(&self, g: &mut Graph, streams: &FeatureStreams) -> Result<Var> {
        let x = self.temporal(g, streams)?;
        let a = self.attention.self_attention(g, x)?;
        let x = g.add(x, a)?;
        let x = g.layer_norm(x, 2, LN_EPS)?;
        self.align.forward(g, x)
    }

    pub fn head_logits(&self, g: &mut Graph, x_feature: Var) -> Result<Var> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Contract("feature block has no standalone head".into()))?;
        let s = g.shape(x_feature).to_vec();
        if s.len() != 3 || s[1] != self.frames {
            return Err(shape_err(
                "feature_head",
                format!("X_feature {s:?} does not have {} frames", self.frames),
            ));
        }
        let flat = g.reshape(x_feature, &[s[0], s[1] * s[2]])?;
        head.forward(g, flat)
    }

    pub fn standalone_logits(&self, g: &mut Graph, streams: &FeatureStreams) -> Result<Var> {
        let x = self.forward(g, streams)?;
        self.head_logits(g, x)
    }
}
