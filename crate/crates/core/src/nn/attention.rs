use rand::Rng;

use super::graph::Graph;
use super::params::{uniform_init, ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Var;

/// Scaled dot-product attention with `heads` heads and no bias terms.
///
/// The per-head projections are stored fused: head `h` uses columns
/// `h·d_head .. (h+1)·d_head` of `wq`, `wk` and `wv`, with
/// `d_head = d_model / heads`. `wo` maps the concatenated heads back to
/// `d_model`. Parameter count is exactly `4·d_model²`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    heads: usize,
    d_model: usize,
    d_head: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {d_model} is not divisible by {heads} heads"
            )));
        }
        let mut proj = |suffix: &str, rng: &mut R| {
            store.add(format!("{name}.{suffix}"), uniform_init(&[d_model, d_model], d_model, rng))
        };
        let wq = proj("wq", rng)?;
        let wk = proj("wk", rng)?;
        let wv = proj("wv", rng)?;
        let wo = proj("wo", rng)?;
        Ok(Self {
            wq,
            wk,
            wv,
            wo,
            heads,
            d_model,
            d_head: d_model / heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn param_count(&self) -> usize {
        4 * self.d_model * self.d_model
    }

    /// Self-attention over the token axis of `x [S, T, d_model]`.
    pub fn self_attention(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward(g, x, x)
    }

    /// Queries from `q_in [S, Tq, d]`, keys and values from `kv_in [S, Tkv, d]`.
    pub fn forward(&self, g: &mut Graph, q_in: Var, kv_in: Var) -> Result<Var> {
        let (qs, ks) = (g.shape(q_in).to_vec(), g.shape(kv_in).to_vec());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.d_model || ks[2] != self.d_model {
            return Err(shape_err(
                "attention",
                format!("queries {qs:?} and keys {ks:?} incompatible with width {}", self.d_model),
            ));
        }
        let (s, tq, tk) = (qs[0], qs[1], ks[1]);
        let (h, dh) = (self.heads, self.d_head);

        let wq = g.param(self.wq);
        let wk = g.param(self.wk);
        let wv = g.param(self.wv);
        let wo = g.param(self.wo);

        let split = |g: &mut Graph, x: Var, w: Var, t: usize| -> Result<Var> {
            let p = g.matmul(x, w)?;
            let p = g.reshape(p, &[s, t, h, dh])?;
            g.permute(p, &[0, 2, 1, 3])
        };
        let q = split(g, q_in, wq, tq)?;
        let k = split(g, kv_in, wk, tk)?;
        let v = split(g, kv_in, wv, tk)?;

        let kt = g.transpose(k, 2, 3)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = g.softmax(scores, 3)?;
        let att = g.matmul(weights, v)?;
        let att = g.permute(att, &[0, 2, 1, 3])?;
        let att = g.reshape(att, &[s, tq, self.d_model])?;
        g.matmul(att, wo)
    }
}
