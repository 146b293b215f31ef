//! Minibatch training under the two regimes, and clip-by-clip evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Confusion, LatencyStats, MetricsReport};
use super::optim::{Adam, AdamConfig};
use crate::config::{ModelConfig, ModelKind, Regime};
use crate::data::batch::{check_compatible, raw_streams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature::{FeatureStreams, NormStats};
use crate::fusion::{Inputs, Network};
use crate::nn::{Graph, Mode};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    /// Drives shuffling and dropout masks.
    pub seed: u64,
    pub regime: Regime,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch: 8,
            epochs: 30,
            seed: 0,
            regime: Regime::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch training loss and accuracy, measured on the fly in train mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl History {
    /// Whether the last epoch's loss is below the first's.
    pub fn improved(&self) -> bool {
        matches!((self.loss.first(), self.loss.last()), (Some(a), Some(b)) if b < a)
    }
}

/// Deterministic child seed for a named purpose.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(tag);
    rng.random()
}

#[derive(Clone, Debug, Default)]
struct ClipInputs {
    frames: Option<Tensor>,
    encoded: Option<Tensor>,
    context: Option<Tensor>,
    streams: Option<FeatureStreams>,
    feature: Option<Tensor>,
}

/// Everything the forward pass needs per clip, with frozen parts replaced
/// by their cached outputs.
struct Prepared {
    clips: Vec<ClipInputs>,
    labels: Vec<usize>,
}

#[derive(Default)]
struct Stacked {
    clips: Option<Tensor>,
    encoded: Option<Tensor>,
    context: Option<Tensor>,
    streams: Option<FeatureStreams>,
    feature: Option<Tensor>,
}

impl Stacked {
    fn inputs(&self) -> Inputs<'_> {
        Inputs {
            clips: self.clips.as_ref(),
            streams: self.streams.as_ref(),
            encoded: self.encoded.as_ref(),
            context: self.context.as_ref(),
            feature: self.feature.as_ref(),
        }
    }
}

fn cat(items: Vec<&Tensor>) -> Result<Option<Tensor>> {
    if items.is_empty() {
        Ok(None)
    } else {
        Tensor::cat_first(&items).map(Some)
    }
}

impl Prepared {
    /// With `cache`, frozen blocks are evaluated once here instead of in
    /// every step.
    fn new(net: &Network, ds: &Dataset, indices: &[usize], cache: bool) -> Result<Self> {
        let frozen = |prefix: &str| net.store.iter().filter(|(_, p)| p.name.starts_with(prefix)).all(|(_, p)| p.frozen);
        let cache_context = cache && net.context.is_some() && frozen("context.");
        let cache_encoder = cache && net.context.is_some() && !cache_context && frozen("context.encoder.");
        let cache_feature = cache && net.feature.is_some() && frozen("feature.");
        let mut clips = Vec::with_capacity(indices.len());
        for &i in indices {
            let clip = &ds.clips[i];
            let mut c = ClipInputs::default();
            if net.context.is_some() {
                let frames = clip.frames.reshape(&[&[1], clip.frames.shape()].concat())?;
                if cache_context {
                    c.context = Some(net.embed_context(&Inputs { clips: Some(&frames), ..Inputs::default() })?);
                } else if cache_encoder {
                    c.encoded = Some(net.encode(&frames)?);
                } else {
                    c.frames = Some(frames);
                }
            }
            if net.feature.is_some() {
                let norm = net
                    .norm
                    .as_ref()
                    .ok_or_else(|| Error::State("feature normalization statistics are missing".into()))?;
                let streams = norm.normalize(&clip.streams()?)?;
                if cache_feature {
                    c.feature = Some(net.embed_feature(&Inputs { streams: Some(&streams), ..Inputs::default() })?);
                } else {
                    c.streams = Some(streams);
                }
            }
            clips.push(c);
        }
        Ok(Self {
            clips,
            labels: indices.iter().map(|&i| ds.clips[i].label.index()).collect(),
        })
    }

    fn stack(&self, positions: &[usize]) -> Result<Stacked> {
        let pick = |f: fn(&ClipInputs) -> Option<&Tensor>| -> Vec<&Tensor> {
            positions.iter().filter_map(|&p| f(&self.clips[p])).collect()
        };
        let streams: Vec<&FeatureStreams> = positions.iter().filter_map(|&p| self.clips[p].streams.as_ref()).collect();
        Ok(Stacked {
            clips: cat(pick(|c| c.frames.as_ref()))?,
            encoded: cat(pick(|c| c.encoded.as_ref()))?,
            context: cat(pick(|c| c.context.as_ref()))?,
            feature: cat(pick(|c| c.feature.as_ref()))?,
            streams: if streams.is_empty() {
                None
            } else {
                Some(FeatureStreams::stack(&streams)?)
            },
        })
    }
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| (1..c).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
        .collect()
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged(format!("non-finite value in {op} at epoch {epoch}, step {step}")),
        Error::Diverged(d) => Error::Diverged(format!("{d} at epoch {epoch}, step {step}")),
        other => other,
    }
}

/// Trains `net` on the clips at `indices` under `cfg.regime`. Feature
/// normalization is fitted on those clips unless the network already
/// carries statistics.
pub fn train(net: &mut Network, ds: &Dataset, indices: &[usize], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    check_compatible(ds, &net.config)?;
    if indices.is_empty() {
        return Err(Error::Contract("no training clips".into()));
    }
    net.set_regime(cfg.regime)?;
    if net.feature.is_some() && net.norm.is_none() {
        net.norm = Some(NormStats::fit(&raw_streams(ds, indices)?)?);
    }
    let prepared = Prepared::new(net, ds, indices, true)?;
    let mut opt = Adam::new(cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let stacked = prepared.stack(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&p| prepared.labels[p]).collect();
            let dropout_seed = rng.random();
            let grads = {
                let mut g = Graph::with_seed(&net.store, Mode::Train, dropout_seed);
                let run = |g: &mut Graph| -> Result<_> {
                    let logits = net.logits(g, &stacked.inputs())?;
                    let loss = g.cross_entropy(logits, &labels)?;
                    Ok((logits, loss))
                };
                let (logits, loss) = run(&mut g).map_err(|e| diverged(epoch, step, e))?;
                let value = g.value(loss).item()?;
                if !value.is_finite() {
                    return Err(Error::Diverged(format!("loss {value} at epoch {epoch}, step {step}")));
                }
                loss_sum += value * labels.len() as f64;
                correct += argmax_rows(g.value(logits)).iter().zip(&labels).filter(|(p, l)| p == l).count();
                g.backward(loss)?
            };
            opt.step(&mut net.store, &grads).map_err(|e| diverged(epoch, step, e))?;
        }
        history.loss.push(loss_sum / indices.len() as f64);
        history.accuracy.push(correct as f64 / indices.len() as f64);
    }
    Ok(history)
}

/// Builds a fused network for `T_fusion`: standalone context and feature
/// blocks are trained on `indices` first, their heads dropped, and their
/// parameters copied in and frozen before the fusion block is trained.
pub fn train_fusion_from_scratch(
    model: &ModelConfig,
    ds: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<(Network, History)> {
    let (context, feature) = pretrain_blocks(model, ds, indices, cfg)?;
    let mut net = Network::new(model.clone().with_kind(ModelKind::DriverNet))?;
    net.load_block(&context, "context.")?;
    net.load_block(&feature, "feature.")?;
    let history = train(&mut net, ds, indices, &TrainConfig { regime: Regime::Fusion, ..cfg.clone() })?;
    Ok((net, history))
}

/// Trains the standalone context and feature blocks used by `T_fusion`.
pub fn pretrain_blocks(model: &ModelConfig, ds: &Dataset, indices: &[usize], cfg: &TrainConfig) -> Result<(Network, Network)> {
    let block = |kind: ModelKind, tag: u64| -> Result<Network> {
        let mut net = Network::new(model.clone().with_kind(kind).with_seed(derive_seed(model.seed, tag)))?;
        let tc = TrainConfig {
            regime: Regime::All,
            seed: derive_seed(cfg.seed, tag),
            ..cfg.clone()
        };
        train(&mut net, ds, indices, &tc)?;
        Ok(net)
    };
    Ok((block(ModelKind::Context, 1)?, block(ModelKind::Feature, 2)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub predictions: Vec<usize>,
}

/// Evaluation-mode predictions one clip at a time; the latency covers the
/// whole forward pass from pixels and raw streams.
pub fn evaluate(net: &Network, ds: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    check_compatible(ds, &net.config)?;
    if indices.is_empty() {
        return Err(Error::Contract("no evaluation clips".into()));
    }
    let prepared = Prepared::new(net, ds, indices, false)?;
    let mut predictions = Vec::with_capacity(indices.len());
    let mut times = Vec::with_capacity(indices.len());
    for p in 0..indices.len() {
        let stacked = prepared.stack(&[p])?;
        let start = Instant::now();
        let logits = net.predict(&stacked.inputs())?;
        times.push(start.elapsed());
        predictions.push(argmax_rows(&logits)[0]);
    }
    let confusion = Confusion::from_predictions(&predictions, &prepared.labels)?;
    Ok(Evaluation {
        metrics: MetricsReport::from_confusion(confusion, LatencyStats::from_durations(&times)),
        predictions,
    })
}

/// Evaluation-mode logits `[len, 2]` for the clips at `indices`.
pub fn logits(net: &Network, ds: &Dataset, indices: &[usize]) -> Result<Tensor> {
    check_compatible(ds, &net.config)?;
    let prepared = Prepared::new(net, ds, indices, false)?;
    let positions: Vec<usize> = (0..indices.len()).collect();
    net.predict(&prepared.stack(&positions)?.inputs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig};
    use crate::config::FusionStrategy;

    fn tiny_data(clips: usize) -> Dataset {
        let cfg = SynthConfig {
            clips,
            frames: 4,
            frame_size: 8,
            rule: crate::data::RuleConfig {
                window: 4,
                ..Default::default()
            },
            ..SynthConfig::default()
        };
        generate_dataset(&cfg, 2).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch: 4,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fusion_step_leaves_blocks_bit_identical() {
        let ds = tiny_data(8);
        let idx: Vec<usize> = (0..8).collect();
        let mut net = Network::new(ModelConfig::miniature()).unwrap();
        net.norm = Some(NormStats::fit(&raw_streams(&ds, &idx).unwrap()).unwrap());
        let before = net.store.clone();
        let cfg = TrainConfig {
            regime: Regime::Fusion,
            ..quick(1)
        };
        train(&mut net, &ds, &idx[..4], &cfg).unwrap();
        let mut fusion_moved = false;
        for (id, p) in net.store.iter() {
            let old = before.value(id);
            if p.name.starts_with("fusion.") {
                fusion_moved |= old != &p.value;
            } else {
                assert_eq!(old.data(), p.value.data(), "{} changed", p.name);
            }
        }
        assert!(fusion_moved);
    }

    #[test]
    fn fusion_regime_caches_match_full_forward() {
        let ds = tiny_data(6);
        let idx: Vec<usize> = (0..6).collect();
        let mut net = Network::new(ModelConfig::miniature().with_fusion(FusionStrategy::Caf)).unwrap();
        net.norm = Some(NormStats::fit(&raw_streams(&ds, &idx).unwrap()).unwrap());
        net.set_regime(Regime::Fusion).unwrap();
        let cached = Prepared::new(&net, &ds, &idx, true).unwrap();
        let full = Prepared::new(&net, &ds, &idx, false).unwrap();
        let p: Vec<usize> = (0..6).collect();
        let a = net.predict(&cached.stack(&p).unwrap().inputs()).unwrap();
        let b = net.predict(&full.stack(&p).unwrap().inputs()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let ds = tiny_data(16);
        let idx: Vec<usize> = (0..16).collect();
        let run = || {
            let mut net = Network::new(ModelConfig::miniature().with_kind(ModelKind::Feature)).unwrap();
            let h = train(&mut net, &ds, &idx, &TrainConfig { optimizer: AdamConfig { lr: 1e-2, ..AdamConfig::default() }, ..quick(15) }).unwrap();
            let e = evaluate(&net, &ds, &idx).unwrap();
            (h, e)
        };
        let (h1, e1) = run();
        let (h2, e2) = run();
        assert_eq!(h1, h2);
        assert_eq!(e1.predictions, e2.predictions);
        assert_eq!(e1.metrics.without_latency(), e2.metrics.without_latency());
        assert!(h1.improved(), "{:?}", h1.loss);
    }

    #[test]
    fn rejects_mismatched_geometry_and_fusion_on_blocks() {
        let ds = tiny_data(4);
        let mut net = Network::new(ModelConfig::compact()).unwrap();
        assert!(matches!(train(&mut net, &ds, &[0, 1], &quick(1)), Err(Error::Config(_))));
        let mut ctx = Network::new(ModelConfig::miniature().with_kind(ModelKind::Context)).unwrap();
        let cfg = TrainConfig { regime: Regime::Fusion, ..quick(1) };
        assert!(train(&mut ctx, &ds, &[0, 1], &cfg).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let ds = tiny_data(8);
        let idx: Vec<usize> = (0..8).collect();
        let mut net = Network::new(ModelConfig::miniature()).unwrap();
        let cfg = TrainConfig { optimizer: AdamConfig { lr: 1e300, ..AdamConfig::default() }, ..quick(3) };
        match train(&mut net, &ds, &idx, &cfg) {
            Err(Error::Diverged(msg)) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
