//! Multi-view video pathway: 3D-conv encoder, view self-attention with a
//! residual layer norm, and reduction over camera views.

use rand::Rng;

use crate::config::{ModelConfig, LN_EPS};
use crate::error::{shape_err, Error, Result};
use crate::nn::{uniform_init, Activation, Graph, Linear, MultiHeadAttention, ParamId, ParamStore, ViewAggregator};
use crate::tensor::Var;

/// Stack of 3×3×3 convolutions (temporal stride 1, spatial stride 2, zero
/// padding 1, bias, ReLU) followed by a spatial mean.
///
/// Maps `[S, N, C, W, H]` to `[S, N, C_last]`; the temporal extent is kept.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    stages: Vec<(ParamId, ParamId)>,
    channels: Vec<usize>,
    in_channels: usize,
}

impl VisualEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        channels: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(channels.len());
        let mut c_in = in_channels;
        for (i, &c_out) in channels.iter().enumerate() {
            let fan_in = 27 * c_in;
            let kernel = store.add(
                format!("{name}.stage{i}.kernel"),
                uniform_init(&[3, 3, 3, c_in, c_out], fan_in, rng),
            )?;
            let bias = store.add(format!("{name}.stage{i}.bias"), uniform_init(&[c_out], fan_in, rng))?;
            stages.push((kernel, bias));
            c_in = c_out;
        }
        Ok(Self {
            stages,
            channels: channels.to_vec(),
            in_channels,
        })
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&self.in_channels)
    }

    pub fn param_count(&self) -> usize {
        let mut c_in = self.in_channels;
        let mut total = 0;
        for &c in &self.channels {
            total += 27 * c_in * c + c;
            c_in = c;
        }
        total
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 5 || shape[2] != self.in_channels {
            return Err(shape_err(
                "encode",
                format!("input {shape:?} is not [S, N, {}, W, H]", self.in_channels),
            ));
        }
        let min = 1usize << self.stages.len();
        if shape[3] < min || shape[4] < min {
            return Err(shape_err(
                "encode",
                format!(
                    "frames of {}×{} are smaller than {min}×{min} required by {} stages",
                    shape[3],
                    shape[4],
                    self.stages.len()
                ),
            ));
        }
        let (s, n) = (shape[0], shape[1]);
        // channels last: [S, N, W, H, C]
        let mut h = g.permute(x, &[0, 1, 3, 4, 2])?;
        for &(kernel, bias) in &self.stages {
            let k = g.param(kernel);
            let b = g.param(bias);
            h = g.conv3d(h, k)?;
            h = g.add_bias(h, b)?;
            h = g.relu(h)?;
        }
        let hs = g.shape(h).to_vec();
        let c = hs[4];
        let pooled = g.reshape(h, &[s, n, hs[2] * hs[3], c])?;
        g.mean(pooled, 2)
    }
}

#[derive(Clone, Debug)]
pub struct ContextBlock {
    pub encoder: VisualEncoder,
    pub view_attention: MultiHeadAttention,
    pub aggregator: ViewAggregator,
    pub head: Option<Linear>,
    views: usize,
    frames: usize,
    d_model: usize,
}

impl ContextBlock {
    /// Builds the block under `name.*`; the standalone head is only created
    /// when `with_head` is set.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        with_head: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = VisualEncoder::new(store, &format!("{name}.encoder"), cfg.channels, &cfg.encoder_channels, rng)?;
        let view_attention =
            MultiHeadAttention::new(store, &format!("{name}.view_attn"), cfg.d_model, cfg.context_heads, rng)?;
        let aggregator = ViewAggregator::new(
            store,
            &format!("{name}.agg"),
            cfg.aggregation,
            cfg.views,
            cfg.d_model,
            cfg.conv_kernel,
            rng,
        )?;
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
            encoder,
            view_attention,
            aggregator,
            head,
            views: cfg.views,
            frames: cfg.frames,
            d_model: cfg.d_model,
        })
    }

    /// Attention, aggregation and head; the encoder is left out.
    pub fn param_count_without_encoder(&self) -> usize {
        self.view_attention.param_count()
            + self.aggregator.param_count()
            + self.head.as_ref().map_or(0, Linear::param_count)
    }

    /// `[B, V, N, C, W, H]` to `[B, V, N, d]`, every view encoded on its own.
    pub fn encode_views(&self, g: &mut Graph, clips: Var) -> Result<Var> {
        let s = g.shape(clips).to_vec();
        if s.len() != 6 || s[1] != self.views {
            return Err(shape_err(
                "encode_views",
                format!("clips {s:?} are not [B, {}, N, C, W, H]", self.views),
            ));
        }
        let flat = g.reshape(clips, &[s[0] * s[1], s[2], s[3], s[4], s[5]])?;
        let enc = self.encoder.forward(g, flat)?;
        g.reshape(enc, &[s[0], s[1], s[2], self.d_model])
    }

    /// View attention, residual layer norm and aggregation on already
    /// encoded views `[B, V, N, d]`, giving `[B, N, d]`.
    pub fn forward_encoded(&self, g: &mut Graph, encoded: Var) -> Result<Var> {
        let s = g.shape(encoded).to_vec();
        if s.len() != 4 || s[1] != self.views || s[3] != self.d_model {
            return Err(shape_err(
                "context",
                format!("encoded views {s:?} are not [B, {}, N, {}]", self.views, self.d_model),
            ));
        }
        let (b, v, n, d) = (s[0], s[1], s[2], s[3]);
        let x = g.permute(encoded, &[0, 2, 1, 3])?;
        let x = g.reshape(x, &[b * n, v, d])?;
        let a = self.view_attention.self_attention(g, x)?;
        let x = g.add(x, a)?;
        let x = g.layer_norm(x, 2, LN_EPS)?;
        let x = self.aggregator.forward(g, x)?;
        g.reshape(x, &[b, n, d])
    }

    /// Full pathway: clips `[B, V, N, C, W, H]` to X_context `[B, N, d]`.
    pub fn forward(&self, g: &mut Graph, clips: Var) -> Result<Var> {
        let enc = self.encode_views(g, clips)?;
        self.forward_encoded(g, enc)
    }

    /// Flattens X_context over time and applies the standalone head.
    pub fn head_logits(&self, g: &mut Graph, x_context: Var) -> Result<Var> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Contract("context block has no standalone head".into()))?;
        let s = g.shape(x_context).to_vec();
        if s.len() != 3 || s[1] != self.frames {
            return Err(shape_err(
                "context_head",
                format!("X_context {s:?} does not have {} frames", self.frames),
            ));
        }
        let flat = g.reshape(x_context, &[s[0], s[1] * s[2]])?;
        head.forward(g, flat)
    }

    pub fn standalone_logits(&self, g: &mut Graph, clips: Var) -> Result<Var> {
        let x = self.forward(g, clips)?;
        self.head_logits(g, x)
    }
}
