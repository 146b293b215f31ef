use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::params::{uniform_init, ParamId, ParamStore};
use crate::error::{shape_err, Result};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

/// `act(x·W + b)` applied over all leading extents.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    d_in: usize,
    d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), uniform_init(&[d_in, d_out], d_in, rng))?;
        let bias = store.add(format!("{name}.bias"), uniform_init(&[d_out], d_in, rng))?;
        Ok(Self {
            weight,
            bias,
            activation,
            d_in,
            d_out,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = g.shape(x).last().copied();
        if last != Some(self.d_in) {
            return Err(shape_err(
                "linear",
                format!("input {:?} does not end in {}", g.shape(x), self.d_in),
            ));
        }
        let vector = g.shape(x).len() == 1;
        let x = if vector { g.reshape(x, &[1, self.d_in])? } else { x };
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        let y = g.add_bias(y, b)?;
        let y = match self.activation {
            Activation::Relu => g.relu(y)?,
            Activation::Identity => y,
        };
        if vector {
            g.reshape(y, &[self.d_out])
        } else {
            Ok(y)
        }
    }
}
