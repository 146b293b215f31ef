//! k-fold cross-validation with a fresh initialization per fold.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{FoldSummary, MetricsReport};
use super::trainer::{derive_seed, evaluate, train, train_fusion_from_scratch, History, TrainConfig};
use crate::config::{ModelConfig, Regime};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::Network;

const FOLD_SALT: u64 = 0xf01d;

/// Seeded shuffle of `0..n` cut into `k` folds whose sizes differ by at
/// most one; the first `n % k` folds get the extra element.
pub fn folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("cannot split {n} samples into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ FOLD_SALT));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub metrics: MetricsReport,
    pub history: History,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub regime: Regime,
    pub trainable_parameters: usize,
    pub folds: Vec<FoldResult>,
    pub summary: FoldSummary,
}

fn run_fold(model: &ModelConfig, cfg: &TrainConfig, ds: &Dataset, parts: &[Vec<usize>], fold: usize) -> Result<(FoldResult, usize)> {
    let val = &parts[fold];
    let train_idx: Vec<usize> = parts
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, p)| p.iter().copied())
        .collect();
    let model = model.clone().with_seed(derive_seed(model.seed, fold as u64));
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, fold as u64),
        ..cfg.clone()
    };
    let (net, history) = match cfg.regime {
        Regime::All => {
            let mut net = Network::new(model)?;
            let h = train(&mut net, ds, &train_idx, &tc)?;
            (net, h)
        }
        Regime::Fusion => train_fusion_from_scratch(&model, ds, &train_idx, &tc)?,
    };
    let eval = evaluate(&net, ds, val)?;
    Ok((
        FoldResult {
            fold,
            train_size: train_idx.len(),
            val_size: val.len(),
            metrics: eval.metrics,
            history,
        },
        net.count_parameters().trainable,
    ))
}

type FoldSlot = Option<Result<(FoldResult, usize)>>;

/// Trains and evaluates one fresh model per fold over the whole dataset.
/// Up to `jobs` folds run at once; per-fold results do not depend on it.
pub fn cross_validate(model: &ModelConfig, cfg: &TrainConfig, ds: &Dataset, k: usize, jobs: usize) -> Result<CrossValReport> {
    cfg.validate()?;
    model.validate()?;
    let parts = folds(ds.len(), k, cfg.seed)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<FoldSlot>> = Mutex::new((0..k).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..jobs.clamp(1, k) {
            s.spawn(|| loop {
                let f = next.fetch_add(1, Ordering::SeqCst);
                if f >= k {
                    break;
                }
                let r = run_fold(model, cfg, ds, &parts, f);
                results.lock().expect("fold results lock")[f] = Some(r);
            });
        }
    });
    let mut folds_out = Vec::with_capacity(k);
    let mut trainable = 0;
    for r in results.into_inner().expect("fold results lock") {
        let (fold, params) = r.ok_or_else(|| Error::State("fold worker did not finish".into()))??;
        trainable = params;
        folds_out.push(fold);
    }
    let metrics: Vec<MetricsReport> = folds_out.iter().map(|f| f.metrics.clone()).collect();
    let summary = FoldSummary::of(&metrics).ok_or_else(|| Error::State("no folds evaluated".into()))?;
    Ok(CrossValReport {
        k,
        regime: cfg.regime,
        trainable_parameters: trainable,
        folds: folds_out,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn hundred_into_five() {
        let f = folds(100, 5, 3).unwrap();
        assert!(f.iter().all(|p| p.len() == 20));
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn k_bounds() {
        assert!(folds(10, 1, 0).is_err());
        assert!(folds(3, 4, 0).is_err());
        assert!(folds(4, 4, 0).is_ok());
    }

    proptest! {
        #[test]
        fn partition_properties(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let f = folds(n, k, seed).unwrap();
            prop_assert_eq!(f.len(), k);
            let sizes: Vec<usize> = f.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut seen = vec![0u8; n];
            for &i in f.iter().flatten() {
                seen[i] += 1;
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert_eq!(folds(n, k, seed).unwrap(), f);
        }
    }
}
