//! Finite-difference gradient suite over every parametric layer and every
//! assembled configuration, at miniature sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{Aggregation, FusionStrategy, ModelConfig, ModelKind, Regime};
use crate::context::VisualEncoder;
use crate::error::Result;
use crate::feature::FeatureStreams;
use crate::fusion::{FusionBlock, Inputs, Network};
use crate::nn::{check_params, Activation, Graph, Gru, Linear, MultiHeadAttention, ParamStore, ViewAggregator};
use crate::tensor::{Tensor, Var};

pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Batch size of every probe.
pub const BATCH: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn row(name: impl Into<String>, store: &ParamStore, seed: u64, tolerance: f64, build: impl Fn(&mut Graph) -> Result<Var>) -> Result<GradRow> {
    let r = check_params(store, seed, |_| true, build)?;
    Ok(GradRow {
        name: name.into(),
        checked: r.checked,
        max_rel_error: r.max_rel_error,
        max_abs_error: r.max_abs_error,
        tolerance,
    })
}

/// Random inputs for a miniature network: clips `[B, V, N, 3, W, H]` and
/// already-normalized streams.
pub fn probe_inputs(cfg: &ModelConfig, seed: u64) -> Result<(Tensor, FeatureStreams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, s) = (BATCH, cfg.frames, cfg.frame_size);
    let clips = Tensor::uniform(&[b, cfg.views, n, cfg.channels, s, s], 1.0, &mut rng);
    let mut streams = FeatureStreams::new(normal(&[b, n, 3], &mut rng), normal(&[b, n, 34], &mut rng), normal(&[b, n, 8], &mut rng))?;
    streams.normalized = true;
    Ok((clips, streams))
}

/// Each layer on its own, with random inputs and a random projection of
/// its output as the loss.
pub fn layer_suite(seed: u64) -> Result<Vec<GradRow>> {
    let cfg = ModelConfig::miniature();
    let d = cfg.d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    for (label, act) in [("linear", Activation::Identity), ("linear+relu", Activation::Relu)] {
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "l", d, 5, act, &mut rng)?;
        let x = normal(&[BATCH, cfg.frames, d], &mut rng);
        rows.push(row(label, &store, seed, LAYER_TOLERANCE, |g| {
            let x = g.input(x.clone());
            layer.forward(g, x)
        })?);
    }

    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "a", d, cfg.context_heads, &mut rng)?;
    let q = normal(&[BATCH, cfg.frames, d], &mut rng);
    let kv = normal(&[BATCH, 3, d], &mut rng);
    rows.push(row("self-attention", &store, seed, LAYER_TOLERANCE, |g| {
        let x = g.input(q.clone());
        mha.self_attention(g, x)
    })?);
    rows.push(row("cross-attention", &store, seed, LAYER_TOLERANCE, |g| {
        let (a, b) = (g.input(q.clone()), g.input(kv.clone()));
        mha.forward(g, a, b)
    })?);

    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", 5, 4, &mut rng)?;
    let x = normal(&[BATCH, cfg.frames, 5], &mut rng);
    rows.push(row("gru", &store, seed, LAYER_TOLERANCE, |g| {
        let x = g.input(x.clone());
        gru.forward(g, x)
    })?);

    for kind in [Aggregation::Ws, Aggregation::Conv1d] {
        let mut store = ParamStore::new();
        let agg = ViewAggregator::new(&mut store, "agg", kind, cfg.views, d, cfg.conv_kernel, &mut rng)?;
        // Non-uniform view weights so the softmax Jacobian is not degenerate.
        if let Some(id) = store.find("agg.logits") {
            *store.value_mut(id) = normal(&[cfg.views], &mut rng);
        }
        let x = normal(&[BATCH * cfg.frames, cfg.views, d], &mut rng);
        rows.push(row(format!("aggregate-{kind}"), &store, seed, LAYER_TOLERANCE, |g| {
            let x = g.input(x.clone());
            agg.forward(g, x)
        })?);
    }

    let mut store = ParamStore::new();
    let enc = VisualEncoder::new(&mut store, "enc", cfg.channels, &cfg.encoder_channels, &mut rng)?;
    let x = Tensor::uniform(&[BATCH, cfg.frames, cfg.channels, cfg.frame_size, cfg.frame_size], 1.0, &mut rng);
    rows.push(row("visual-encoder", &store, seed, LAYER_TOLERANCE, |g| {
        let x = g.input(x.clone());
        enc.forward(g, x)
    })?);

    let (clips, streams) = probe_inputs(&cfg, seed)?;
    for &agg in Aggregation::ALL {
        let net = Network::new(cfg.clone().with_kind(ModelKind::Context).with_aggregation(agg).with_seed(seed))?;
        let block = net.context.as_ref().expect("context network");
        rows.push(row(format!("context-block-{agg}"), &net.store, seed, LAYER_TOLERANCE, |g| {
            let x = g.input(clips.clone());
            block.forward(g, x)
        })?);
    }
    let net = Network::new(cfg.clone().with_kind(ModelKind::Feature).with_seed(seed))?;
    let block = net.feature.as_ref().expect("feature network");
    rows.push(row("feature-block", &net.store, seed, LAYER_TOLERANCE, |g| block.forward(g, &streams))?);

    let xc = normal(&[BATCH, cfg.frames, d], &mut rng);
    let xf = normal(&[BATCH, cfg.frames, d], &mut rng);
    for &strategy in FusionStrategy::ALL {
        let mut store = ParamStore::new();
        let fb = FusionBlock::new(&mut store, "fusion", &cfg.clone().with_fusion(strategy), &mut rng)?;
        rows.push(row(format!("fusion-{strategy}"), &store, seed, LAYER_TOLERANCE, |g| {
            let (a, b) = (g.input(xc.clone()), g.input(xf.clone()));
            let fused = fb.fuse(g, a, b)?;
            fb.head(g, fused)
        })?);
    }
    Ok(rows)
}

/// Cross-entropy of the assembled network for every aggregation × fusion
/// pair, under both regimes. Frozen parameters are not probed.
pub fn model_suite(seed: u64) -> Result<Vec<GradRow>> {
    let base = ModelConfig::miniature().with_seed(seed);
    let (clips, streams) = probe_inputs(&base, seed)?;
    let labels = [0usize, 1];
    let mut rows = Vec::new();
    for &agg in Aggregation::ALL {
        for &strategy in FusionStrategy::ALL {
            for &regime in Regime::ALL {
                let mut net = Network::new(base.clone().with_aggregation(agg).with_fusion(strategy))?;
                net.set_regime(regime)?;
                let inputs = Inputs {
                    clips: Some(&clips),
                    streams: Some(&streams),
                    ..Inputs::default()
                };
                rows.push(row(format!("drivernet-{agg}-{strategy}-{regime}"), &net.store, seed, MODEL_TOLERANCE, |g| {
                    let logits = net.logits(g, &inputs)?;
                    g.cross_entropy(logits, &labels)
                })?);
            }
        }
    }
    Ok(rows)
}
