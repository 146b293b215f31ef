use rand::Rng;

use super::graph::{Graph, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Inverted dropout: in training each element is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`. Evaluation mode is the identity.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        Ok(Self { p })
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.mode() == Mode::Eval || self.p == 0.0 {
            return Ok(x);
        }
        let shape = g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        let rng = g.rng();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = g.input(Tensor::new(&shape, mask)?);
        g.mul(x, mask)
    }
}
