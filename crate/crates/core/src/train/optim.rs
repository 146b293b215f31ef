//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamGrads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state. Buffers are created lazily, and only for parameters
/// that are trainable when a step happens.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Number of parameters holding moment buffers.
    pub fn buffered(&self) -> usize {
        self.moments.iter().filter(|m| m.is_some()).count()
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if store.get(id).frozen {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite gradient in {} at entry {bad}",
                    store.get(id).name
                )));
            }
            let n = g.len();
            let mom = self.moments[k].get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let w = store.value_mut(id).data_mut();
            for i in 0..n {
                mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * g[i];
                mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = mom.m[i] / bc1;
                let vh = mom.v[i] / bc2;
                w[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Mode};
    use crate::tensor::Tensor;

    fn quadratic(store: &ParamStore) -> f64 {
        let w = store.value(store.find("w").unwrap()).data();
        w.iter().zip([3.0, -1.0, 0.5]).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn descend(lr: f64, steps: usize) -> (f64, f64) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[3])).unwrap();
        let start = quadratic(&store);
        let mut opt = Adam::new(AdamConfig { lr, ..AdamConfig::default() }).unwrap();
        for _ in 0..steps {
            let grads = {
                let mut g = Graph::new(&store, Mode::Train);
                let w = g.param(id);
                let target = g.input(Tensor::new(&[3], vec![3.0, -1.0, 0.5]).unwrap());
                let d = g.sub(w, target).unwrap();
                let sq = g.mul(d, d).unwrap();
                let loss = g.sum(sq).unwrap();
                g.backward(loss).unwrap()
            };
            opt.step(&mut store, &grads).unwrap();
        }
        (start, quadratic(&store))
    }

    #[test]
    fn reduces_a_convex_quadratic() {
        for lr in [1e-3, 1e-2, 1e-1] {
            let (start, end) = descend(lr, 200);
            assert!(end < start, "lr {lr}: {end} !< {start}");
        }
        let (_, end) = descend(0.05, 2000);
        assert!(end < 1e-6, "{end}");
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[3])).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let grads = {
            let mut g = Graph::new(&store, Mode::Train);
            let w = g.param(id);
            let c = g.input(Tensor::new(&[3], vec![2.0, -0.5, 1e-3]).unwrap());
            let p = g.mul(w, c).unwrap();
            let loss = g.sum(p).unwrap();
            g.backward(loss).unwrap()
        };
        opt.step(&mut store, &grads).unwrap();
        let w = store.value(id).data();
        for (x, g) in w.iter().zip([2.0f64, -0.5, 1e-3]) {
            let expect = -1e-3 * g / (g.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15, "{x} vs {expect}");
        }
    }

    #[test]
    fn frozen_parameters_get_no_buffers() {
        let mut store = ParamStore::new();
        let a = store.add("a.w", Tensor::full(&[2], 1.0)).unwrap();
        let b = store.add("b.w", Tensor::full(&[2], 1.0)).unwrap();
        store.set_frozen("a.", true);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let grads = {
            let mut g = Graph::new(&store, Mode::Train);
            let (x, y) = (g.param(a), g.param(b));
            let s = g.add(x, y).unwrap();
            let loss = g.sum(s).unwrap();
            g.backward(loss).unwrap()
        };
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(opt.buffered(), 1);
        assert_eq!(store.value(a).data(), &[1.0, 1.0]);
        assert!(store.value(b).data()[0] < 1.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }).is_err());
        assert!(Adam::new(AdamConfig { beta2: 1.0, ..AdamConfig::default() }).is_err());
    }
}
