use rand::Rng;

use super::graph::Graph;
use super::params::{uniform_init, ParamId, ParamStore};
use crate::error::{shape_err, Result};
use crate::tensor::{Tensor, Var};

/// Unidirectional gated recurrent unit with one bias per gate:
///
/// ```text
/// z_t = σ(x_t W_z + h_{t-1} U_z + b_z)
/// r_t = σ(x_t W_r + h_{t-1} U_r + b_r)
/// ĥ_t = tanh(x_t W_h + (r_t ⊙ h_{t-1}) U_h + b_h)
/// h_t = (1 − z_t) ⊙ h_{t-1} + z_t ⊙ ĥ_t,   h_0 = 0
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub w: [ParamId; 3],
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
    d_in: usize,
    d_h: usize,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(store.add(format!("{name}.w_{gate}"), uniform_init(&[d_in, d_h], d_in, rng))?);
            u.push(store.add(format!("{name}.u_{gate}"), uniform_init(&[d_h, d_h], d_h, rng))?);
            b.push(store.add(format!("{name}.b_{gate}"), uniform_init(&[d_h], d_h, rng))?);
        }
        let arr = |v: Vec<ParamId>| [v[0], v[1], v[2]];
        Ok(Self {
            w: arr(w),
            u: arr(u),
            b: arr(b),
            d_in,
            d_h,
        })
    }

    pub fn d_hidden(&self) -> usize {
        self.d_h
    }

    pub fn param_count(&self) -> usize {
        3 * (self.d_in * self.d_h + self.d_h * self.d_h + self.d_h)
    }

    /// `x [S, N, d_in]` to the hidden sequence `h_1..h_N` as `[S, N, d_h]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d_in {
            return Err(shape_err("gru", format!("input {shape:?} is not [S, N, {}]", self.d_in)));
        }
        let (s, n) = (shape[0], shape[1]);
        // Input projections for all steps at once, bias folded in.
        let mut proj = Vec::with_capacity(3);
        for i in 0..3 {
            let w = g.param(self.w[i]);
            let b = g.param(self.b[i]);
            let p = g.matmul(x, w)?;
            proj.push(g.add_bias(p, b)?);
        }
        let u: Vec<Var> = self.u.iter().map(|&id| g.param(id)).collect();

        let mut h = g.input(Tensor::zeros(&[s, self.d_h]));
        let mut outputs = Vec::with_capacity(n);
        for t in 0..n {
            let xz = g.select(proj[0], 1, t)?;
            let xr = g.select(proj[1], 1, t)?;
            let xh = g.select(proj[2], 1, t)?;

            let hz = g.matmul(h, u[0])?;
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z)?;

            let hr = g.matmul(h, u[1])?;
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r)?;

            let rh = g.mul(r, h)?;
            let rh = g.matmul(rh, u[2])?;
            let cand = g.add(xh, rh)?;
            let cand = g.tanh(cand)?;

            // (1 − z)⊙h + z⊙ĥ, written as h + z⊙(ĥ − h)
            let delta = g.sub(cand, h)?;
            let step = g.mul(z, delta)?;
            h = g.add(h, step)?;
            outputs.push(g.reshape(h, &[s, 1, self.d_h])?);
        }
        g.concat(&outputs, 1)
    }
}
