//! Checks shared by the integration tests and the acceptance runner. Each
//! returns a one-line summary on success and a description of the first
//! violation otherwise.
#![allow(dead_code)]

use drivernet::audit::{published_context, published_drivernet};
use drivernet::data::{generate_dataset, Dataset, Split, SynthConfig};
use drivernet::nn::{Graph, Gru, Mode, ParamStore, ViewAggregator};
use drivernet::train::trainer::logits;
use drivernet::train::{evaluate, train, TrainConfig};
use drivernet::{Aggregation, FusionStrategy, ModelConfig, ModelKind, Network, Regime, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn trainable(cfg: ModelConfig) -> i64 {
    Network::new(cfg).unwrap().count_parameters().trainable as i64
}

pub fn context_counts() -> Check {
    let mut parts = Vec::new();
    for &agg in Aggregation::ALL {
        let ours = trainable(ModelConfig::paper().with_kind(ModelKind::Context).with_aggregation(agg));
        let paper = published_context(agg) as i64;
        ensure(ours == paper, || format!("{agg}: {ours} != {paper}"))?;
        parts.push(format!("{agg} {ours}"));
    }
    Ok(parts.join(", "))
}

pub fn parameter_deltas() -> Check {
    let context = |agg| trainable(ModelConfig::paper().with_kind(ModelKind::Context).with_aggregation(agg));
    let gap = context(Aggregation::Gap);
    ensure(context(Aggregation::Ws) - gap == 3, || "context WS-GAP != 3".into())?;
    ensure(context(Aggregation::Conv1d) - gap == 196_608, || "context Conv1D-GAP != 196,608".into())?;

    let full = |agg, fusion| trainable(ModelConfig::paper().with_aggregation(agg).with_fusion(fusion));
    let paper = |agg, fusion| published_drivernet(agg, fusion) as i64;
    let mut cf_af = Vec::new();
    let mut caf_af = Vec::new();
    let mut paper_cf_af = Vec::new();
    let mut paper_caf_af = Vec::new();
    for &agg in Aggregation::ALL {
        let af = full(agg, FusionStrategy::Af);
        cf_af.push(full(agg, FusionStrategy::Cf) - af);
        caf_af.push(full(agg, FusionStrategy::Caf) - af);
        paper_cf_af.push(paper(agg, FusionStrategy::Cf) - paper(agg, FusionStrategy::Af));
        paper_caf_af.push(paper(agg, FusionStrategy::Caf) - paper(agg, FusionStrategy::Af));
    }
    for &fusion in FusionStrategy::ALL {
        let ws = full(Aggregation::Ws, fusion) - full(Aggregation::Gap, fusion);
        ensure(ws == 3, || format!("{fusion}: assembled WS-GAP = {ws}"))?;
        let pws = paper(Aggregation::Ws, fusion) - paper(Aggregation::Gap, fusion);
        ensure(pws == 3, || format!("{fusion}: published WS-GAP = {pws}"))?;
    }
    let constant = |v: &[i64]| v.iter().all(|&x| x == v[0]);
    ensure(constant(&cf_af), || format!("CF-AF varies across aggregations: {cf_af:?}"))?;
    ensure(constant(&caf_af), || format!("CAF-AF varies across aggregations: {caf_af:?}"))?;
    ensure(constant(&paper_cf_af) && constant(&paper_caf_af), || "published deltas not constant".into())?;
    Ok(format!(
        "WS-GAP 3, Conv1D-GAP 196,608; CF-AF ours {} paper {}; CAF-AF ours {} paper {}",
        cf_af[0], paper_cf_af[0], caf_af[0], paper_caf_af[0]
    ))
}

fn eval_graph(store: &ParamStore, f: impl FnOnce(&mut Graph) -> drivernet::Var) -> Tensor {
    let mut g = Graph::new(store, Mode::Eval);
    let v = f(&mut g);
    g.value(v).clone()
}

/// Largest deviation of softmax row sums from one over random inputs.
pub fn softmax_error(x: &Tensor, axis: usize) -> f64 {
    let mut tape = drivernet::Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.softmax(v, axis).unwrap();
    let y = tape.value(y);
    let len = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer = x.numel() / (len * inner);
    let mut worst: f64 = 0.0;
    for o in 0..outer {
        for i in 0..inner {
            let s: f64 = (0..len).map(|k| y.data()[(o * len + k) * inner + i]).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// Mean and variance errors of layer-normalized rows; the expected variance
/// is `v / (v + eps)` for a row of population variance `v`.
pub fn layer_norm_errors(x: &Tensor, eps: f64) -> (f64, f64) {
    let mut tape = drivernet::Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.layer_norm(v, 1, eps).unwrap();
    let y = tape.value(y).clone();
    let n = x.shape()[1];
    let (mut mean_err, mut var_err): (f64, f64) = (0.0, 0.0);
    for (row, out) in x.data().chunks(n).zip(y.data().chunks(n)) {
        let m = row.iter().sum::<f64>() / n as f64;
        let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64;
        let om = out.iter().sum::<f64>() / n as f64;
        let ov = out.iter().map(|a| (a - om).powi(2)).sum::<f64>() / n as f64;
        mean_err = mean_err.max(om.abs());
        var_err = var_err.max((ov - v / (v + eps)).abs());
    }
    (mean_err, var_err)
}

fn permute_views(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let (b, v, d) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; x.numel()];
    for bi in 0..b {
        for (to, &from) in perm.iter().enumerate() {
            let src = (bi * v + from) * d;
            out[(bi * v + to) * d..(bi * v + to + 1) * d].copy_from_slice(&x.data()[src..src + d]);
        }
    }
    Tensor::new(s, out).unwrap()
}

fn aggregate(kind: Aggregation, x: &Tensor, seed: u64) -> Tensor {
    let mut store = ParamStore::new();
    let agg = ViewAggregator::new(&mut store, "agg", kind, x.shape()[1], x.shape()[2], 3, &mut rng(seed)).unwrap();
    eval_graph(&store, |g| {
        let v = g.input(x.clone());
        agg.forward(g, v).unwrap()
    })
}

pub fn structural_invariants() -> Check {
    let mut r = rng(404);
    let mut worst_softmax: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for _ in 0..50 {
        let x = Tensor::uniform(&[4, 7, 3], 30.0, &mut r);
        for axis in 0..3 {
            worst_softmax = worst_softmax.max(softmax_error(&x, axis));
        }
        let (m, v) = layer_norm_errors(&x.reshape(&[12, 7]).unwrap(), 1e-5);
        worst_mean = worst_mean.max(m);
        worst_var = worst_var.max(v);
    }
    ensure(worst_softmax <= 1e-12, || format!("softmax sums off by {worst_softmax:e}"))?;
    ensure(worst_mean <= 1e-10, || format!("layer-norm mean {worst_mean:e}"))?;
    ensure(worst_var <= 1e-8, || format!("layer-norm variance {worst_var:e}"))?;

    let x = Tensor::uniform(&[3, 3, 16], 2.0, &mut r);
    let xp = permute_views(&x, &[2, 0, 1]);
    let gap_diff = aggregate(Aggregation::Gap, &x, 1).max_abs_diff(&aggregate(Aggregation::Gap, &xp, 1));
    ensure(gap_diff <= 1e-12, || format!("GAP moved by {gap_diff:e} under view permutation"))?;
    ensure(aggregate(Aggregation::Ws, &x, 1) == aggregate(Aggregation::Gap, &x, 1), || {
        "uniform weighted sum differs from GAP".into()
    })?;
    let conv_diff = aggregate(Aggregation::Conv1d, &x, 2).max_abs_diff(&aggregate(Aggregation::Conv1d, &xp, 2));
    ensure(conv_diff > 1e-6, || "Conv1D aggregation is view-permutation invariant".into())?;

    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", 3, 5, &mut rng(22)).unwrap();
    let n = 6;
    let seq = Tensor::uniform(&[2, n, 3], 1.0, &mut r);
    let full = eval_graph(&store, |g| {
        let v = g.input(seq.clone());
        gru.forward(g, v).unwrap()
    });
    for t in 1..=n {
        let prefix = eval_graph(&store, |g| {
            let v = g.input(seq.clone());
            let v = g.slice(v, 1, 0, t).unwrap();
            gru.forward(g, v).unwrap()
        });
        for b in 0..2 {
            ensure(full.data()[b * n * 5..b * n * 5 + t * 5] == prefix.data()[b * t * 5..(b + 1) * t * 5], || {
                format!("GRU output at prefix {t} depends on later steps")
            })?;
        }
    }

    let ds = small_dataset(16, 77);
    let idx = ds.split_indices(Split::Train);
    let mut net = Network::new(ModelConfig::miniature().with_seed(3)).unwrap();
    net.set_regime(Regime::Fusion).unwrap();
    let before = net.store.clone();
    let cfg = TrainConfig { epochs: 2, seed: 3, regime: Regime::Fusion, ..TrainConfig::default() };
    train(&mut net, &ds, &idx, &cfg).unwrap();
    let mut fusion_moved = false;
    for ((_, a), (_, b)) in before.iter().zip(net.store.iter()) {
        let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if a.name.starts_with("context.") || a.name.starts_with("feature.") {
            ensure(same, || format!("frozen {} changed under fusion-only training", a.name))?;
        } else {
            fusion_moved |= !same;
        }
    }
    ensure(fusion_moved, || "fusion parameters did not train".into())?;
    Ok(format!(
        "softmax {worst_softmax:.1e}, layer-norm {worst_mean:.1e}/{worst_var:.1e}, GAP {gap_diff:.1e}, Conv1D witness {conv_diff:.2}"
    ))
}

pub fn small_dataset(clips: usize, seed: u64) -> Dataset {
    generate_dataset(
        &SynthConfig { clips, seed, frames: 4, frame_size: 8, rule: drivernet::data::RuleConfig { window: 4, ..Default::default() }, ..SynthConfig::default() },
        1,
    )
    .unwrap()
}

/// Regenerate, retrain and re-evaluate twice; everything must agree bitwise.
pub fn determinism() -> Check {
    let run = || {
        let ds = generate_dataset(&SynthConfig { clips: 48, seed: 11, frame_size: 8, ..SynthConfig::default() }, 1).unwrap();
        let mut net = Network::new(ModelConfig::compact().with_seed(11)).unwrap();
        let tr = ds.split_indices(Split::Train);
        let te = ds.split_indices(Split::Test);
        let history = train(&mut net, &ds, &tr, &TrainConfig { epochs: 2, seed: 11, ..TrainConfig::default() }).unwrap();
        let eval = evaluate(&net, &ds, &te).unwrap();
        let out = logits(&net, &ds, &te).unwrap();
        (ds, history, eval.metrics.without_latency(), eval.predictions, out)
    };
    let a = run();
    let b = run();
    ensure(a.0 == b.0, || "datasets differ".into())?;
    ensure(a.1 == b.1, || "training histories differ".into())?;
    ensure(a.2 == b.2 && a.3 == b.3, || "metrics differ".into())?;
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a.4) == bits(&b.4), || "logits differ".into())?;
    Ok(format!("48 clips, accuracy {:.3} reproduced bitwise", a.2.accuracy))
}
