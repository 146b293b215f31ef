//! Per-clip inference latency of the fused network, excluding data loading
//! and the visual encoder.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::LatencyStats;
use crate::config::{FusionStrategy, ModelConfig, ModelKind};
use crate::data::batch::{check_compatible, raw_streams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature::{FeatureStreams, NormStats};
use crate::fusion::{Inputs, Network};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub strategy: FusionStrategy,
    /// Trainable parameters with the encoder excluded.
    pub parameters: usize,
    pub latency: LatencyStats,
}

/// Times `repeats` evaluation passes over each clip, starting from cached
/// encoder outputs and normalized streams.
pub fn time_network(net: &Network, ds: &Dataset, indices: &[usize], repeats: usize) -> Result<LatencyStats> {
    check_compatible(ds, &net.config)?;
    if indices.is_empty() || repeats == 0 {
        return Err(Error::Contract("benchmark needs clips and at least one repeat".into()));
    }
    let norm = match (&net.norm, net.feature.is_some()) {
        (Some(n), _) => Some(n.clone()),
        (None, true) => Some(NormStats::fit(&raw_streams(ds, indices)?)?),
        (None, false) => None,
    };
    let mut prepared = Vec::with_capacity(indices.len());
    for &i in indices {
        let clip = &ds.clips[i];
        let encoded = if net.context.is_some() {
            let frames = clip.frames.reshape(&[&[1], clip.frames.shape()].concat())?;
            Some(net.encode(&frames)?)
        } else {
            None
        };
        let streams = match &norm {
            Some(n) => Some(n.normalize(&clip.streams()?)?),
            None => None,
        };
        prepared.push((encoded, streams));
    }
    fn inputs(p: &(Option<Tensor>, Option<FeatureStreams>)) -> Inputs<'_> {
        Inputs {
            encoded: p.0.as_ref(),
            streams: p.1.as_ref(),
            ..Inputs::default()
        }
    }
    net.predict(&inputs(&prepared[0]))?;
    let mut times = Vec::with_capacity(indices.len() * repeats);
    for _ in 0..repeats {
        for p in &prepared {
            let start = Instant::now();
            let out = net.predict(&inputs(p))?;
            times.push(start.elapsed());
            std::hint::black_box(out);
        }
    }
    Ok(LatencyStats::from_durations(&times).expect("at least one timing"))
}

/// Latency of each fusion strategy. `nets` supplies trained networks by
/// strategy; strategies without one use a fresh initialization of `base`,
/// since latency does not depend on the parameter values.
pub fn bench_strategies(base: &ModelConfig, nets: &[Network], ds: &Dataset, indices: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &strategy in FusionStrategy::ALL {
        let fresh;
        let net = match nets.iter().find(|n| n.config.kind == ModelKind::DriverNet && n.config.fusion == strategy) {
            Some(n) => n,
            None => {
                fresh = Network::new(base.clone().with_kind(ModelKind::DriverNet).with_fusion(strategy))?;
                &fresh
            }
        };
        rows.push(BenchRow {
            model: format!("drivernet-{}-{}", net.config.aggregation, strategy),
            strategy,
            parameters: net.count_parameters().trainable,
            latency: time_network(net, ds, indices, repeats)?,
        });
    }
    Ok(rows)
}
