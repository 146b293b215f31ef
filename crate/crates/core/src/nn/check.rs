use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode};
use super::params::ParamStore;
use crate::error::Result;
use crate::tensor::gradcheck::{GradCheck, FD_STEP};
use crate::tensor::{Tensor, Var};

/// Compares backpropagated parameter gradients with central differences.
///
/// `build` runs one forward pass; a non-scalar result is reduced by a fixed
/// random projection. Every pass uses `Mode::Train` with the same dropout
/// seed, so masks agree between the analytic and numeric evaluations.
/// Frozen parameters are skipped, and only parameters accepted by `select`
/// are probed.
pub fn check_params(
    store: &ParamStore,
    seed: u64,
    select: impl Fn(&str) -> bool,
    build: impl Fn(&mut Graph) -> Result<Var>,
) -> Result<GradCheck> {
    let forward = |store: &ParamStore, w: Option<&Tensor>| -> Result<(f64, Tensor)> {
        let mut g = Graph::with_seed(store, Mode::Train, seed);
        let out = build(&mut g)?;
        let value = g.value(out).clone();
        let loss = match w {
            Some(w) => value.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
            None => value.data().iter().sum(),
        };
        Ok((loss, value))
    };

    let (_, out0) = forward(store, None)?;
    let w = if out0.numel() == 1 {
        Tensor::full(out0.shape(), 1.0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let data = (0..out0.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(out0.shape(), data)?
    };

    let grads = {
        let mut g = Graph::with_seed(store, Mode::Train, seed);
        let out = build(&mut g)?;
        let wv = g.input(w.clone());
        let prod = g.mul(out, wv)?;
        let loss = g.sum(prod)?;
        g.backward(loss)?
    };

    let mut probe = store.clone();
    let mut report = GradCheck::default();
    for (id, p) in store.iter() {
        if p.frozen || !select(&p.name) {
            continue;
        }
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.value.numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = p.value.data()[i];
            probe.value_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = forward(&probe, Some(&w))?.0;
            probe.value_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = forward(&probe, Some(&w))?.0;
            probe.value_mut(id).data_mut()[i] = orig;
            report.record(a, (up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}
