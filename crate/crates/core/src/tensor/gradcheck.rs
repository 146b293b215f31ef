//! Central finite-difference oracle. It evaluates only forward values, so it
//! stays independent of the backward rules it is used to check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;

/// Magnitude below which errors are measured absolutely rather than relatively.
/// Central differences at step 1e-6 carry a few 1e-9 of absolute rounding
/// noise on small networks, which would swamp the ratio for tiny entries.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Summary of one comparison between analytic and numeric gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.max_abs_error = self.max_abs_error.max((analytic - numeric).abs());
        self.checked += 1;
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.checked += other.checked;
    }
}

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe)?;
        probe[i] = orig - step;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Checks the gradient of `Σ w ⊙ build(inputs)` with respect to every input,
/// where `w` is a fixed random projection (so normalizing ops such as
/// softmax do not produce trivially zero gradients).
pub fn check_op(
    inputs: &[Tensor],
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |xs: &[Tensor], w: Option<&Tensor>| -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let ov = tape.value(out).clone();
        let loss = match w {
            Some(w) => ov.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
            None => 0.0,
        };
        Ok((loss, ov))
    };
    let (_, out0) = eval(inputs, None)?;
    let weights: Vec<f64> = (0..out0.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = Tensor::new(out0.shape(), weights)?;

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv)?;
    let loss = tape.sum(prod)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheck::default();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).map(<[f64]>::to_vec).unwrap_or_default();
        let numeric = central_difference(
            |x| {
                let mut probe = inputs.to_vec();
                probe[i] = Tensor::new(input.shape(), x.to_vec())?;
                Ok(eval(&probe, Some(&w))?.0)
            },
            input.data(),
            FD_STEP,
        )?;
        for (a, n) in analytic.iter().zip(&numeric) {
            report.record(*a, *n);
        }
    }
    Ok(report)
}
