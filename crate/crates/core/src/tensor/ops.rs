//! Forward evaluation and backward rules for every differentiable operation.

use super::gemm::{gemm, MatRef};
use super::tape::{Node, Tape, Var};
use super::{split_axis, Tensor};
use crate::error::{shape_err, Error, Result};

/// Spatio-temporal convolution geometry for channels-last `[S, T, W, H, C]`
/// input with a 3×3×3 kernel, temporal stride 1, spatial stride 2, padding 1.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv3dGeom {
    s: usize,
    t: usize,
    w: usize,
    h: usize,
    c_in: usize,
    c_out: usize,
    w_out: usize,
    h_out: usize,
}

impl Conv3dGeom {
    const TAPS: usize = 27;

    fn rows(&self) -> usize {
        self.s * self.t * self.w_out * self.h_out
    }

    fn cols(&self) -> usize {
        Self::TAPS * self.c_in
    }

    /// Visits every (row, tap offset, input offset) triple whose input lies
    /// inside the volume; padded taps are skipped.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let c = self.c_in;
        let mut row = 0;
        for s in 0..self.s {
            for t in 0..self.t {
                for wo in 0..self.w_out {
                    for ho in 0..self.h_out {
                        for dt in 0..3 {
                            let ti = t + dt;
                            if ti == 0 || ti > self.t {
                                continue;
                            }
                            let ti = ti - 1;
                            for dw in 0..3 {
                                let wi = 2 * wo + dw;
                                if wi == 0 || wi > self.w {
                                    continue;
                                }
                                let wi = wi - 1;
                                for dh in 0..3 {
                                    let hi = 2 * ho + dh;
                                    if hi == 0 || hi > self.h {
                                        continue;
                                    }
                                    let hi = hi - 1;
                                    let tap = ((dt * 3 + dw) * 3 + dh) * c;
                                    let src = (((s * self.t + ti) * self.w + wi) * self.h + hi) * c;
                                    f(row, tap, src);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let k = self.cols();
        let c = self.c_in;
        let mut cols = vec![0.0; self.rows() * k];
        self.for_each_tap(|row, tap, src| {
            cols[row * k + tap..row * k + tap + c].copy_from_slice(&x[src..src + c]);
        });
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let k = self.cols();
        let c = self.c_in;
        self.for_each_tap(|row, tap, src| {
            for (d, v) in dx[src..src + c].iter_mut().zip(&cols[row * k + tap..row * k + tap + c]) {
                *d += v;
            }
        });
    }
}

#[derive(Clone, Debug)]
pub(crate) enum MatMulPlan {
    /// Right operand is a plain matrix; the left operand's leading extents fold into rows.
    Flat { rows: usize, k: usize, n: usize },
    /// Per output batch, the (left, right) batch indices after broadcasting.
    Batched {
        m: usize,
        k: usize,
        n: usize,
        pairs: Vec<(usize, usize)>,
    },
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul { a: Var, b: Var, plan: MatMulPlan },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<f64> },
    Mean { x: Var, axis: usize },
    WeightedSum { x: Var, w: Var, axis: usize },
    Sum(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Conv1d { x: Var, kernel: Var },
    Conv3d { x: Var, kernel: Var, geom: Conv3dGeom },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

/// Lazily allocated gradient accumulators, one per tape node.
struct Sink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Sink<'_> {
    fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| vec![0.0; node.value.numel()])
                .as_mut_slice(),
        )
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) => vec![*a, *b],
            Scale(x, _) | Relu(x) | Sigmoid(x) | Tanh(x) | Reshape(x) | Sum(x) => vec![*x],
            MatMul { a, b, .. } => vec![*a, *b],
            Permute { x, .. }
            | Softmax { x, .. }
            | LayerNorm { x, .. }
            | Mean { x, .. }
            | Slice { x, .. } => vec![*x],
            WeightedSum { x, w, .. } => vec![*x, *w],
            Concat { parts, .. } => parts.clone(),
            Conv1d { x, kernel } | Conv3d { x, kernel, .. } => vec![*x, *kernel],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    pub(crate) fn backward(
        &self,
        nodes: &[Node],
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let mut sink = Sink { nodes, grads };
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = sink.slot(v) {
                        axpy(d, g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = sink.slot(*a) {
                    axpy(d, g, 1.0);
                }
                if let Some(d) = sink.slot(*b) {
                    axpy(d, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let bv = sink.val(*b).clone();
                let av = sink.val(*a).clone();
                if let Some(d) = sink.slot(*a) {
                    for ((d, g), o) in d.iter_mut().zip(g).zip(bv.data()) {
                        *d += g * o;
                    }
                }
                if let Some(d) = sink.slot(*b) {
                    for ((d, g), o) in d.iter_mut().zip(g).zip(av.data()) {
                        *d += g * o;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(d) = sink.slot(*x) {
                    axpy(d, g, 1.0);
                }
                if let Some(d) = sink.slot(*b) {
                    let n = d.len();
                    for row in g.chunks_exact(n) {
                        axpy(d, row, 1.0);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(d) = sink.slot(*x) {
                    axpy(d, g, *s);
                }
            }
            Op::Relu(x) => {
                let xv = sink.val(*x).clone();
                if let Some(d) = sink.slot(*x) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(xv.data()) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = sink.slot(*x) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *d += g * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(d) = sink.slot(*x) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *d += g * (1.0 - y * y);
                    }
                }
            }
            Op::MatMul { a, b, plan } => matmul_backward(&mut sink, *a, *b, plan, g),
            Op::Permute { x, axes } => {
                let shape = sink.val(*x).shape().to_vec();
                if let Some(d) = sink.slot(*x) {
                    let map = permute_map(&shape, axes);
                    for (o, &i) in map.iter().enumerate() {
                        d[i] += g[o];
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = sink.slot(*x) {
                    axpy(d, g, 1.0);
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(d) = sink.slot(*x) {
                    let (outer, len, inner) = split_axis(out.shape(), *axis);
                    let y = out.data();
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + j;
                            let dot: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..len {
                                d[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, axis, inv_std } => {
                if let Some(d) = sink.slot(*x) {
                    let (outer, len, inner) = split_axis(out.shape(), *axis);
                    let y = out.data();
                    let n = len as f64;
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + j;
                            let mg: f64 = (0..len).map(|i| g[idx(i)]).sum::<f64>() / n;
                            let mgy: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum::<f64>() / n;
                            let r = inv_std[o * inner + j];
                            for i in 0..len {
                                d[idx(i)] += r * (g[idx(i)] - mg - y[idx(i)] * mgy);
                            }
                        }
                    }
                }
            }
            Op::Mean { x, axis } => {
                let shape = sink.val(*x).shape().to_vec();
                if let Some(d) = sink.slot(*x) {
                    let (outer, len, inner) = split_axis(&shape, *axis);
                    let inv = 1.0 / len as f64;
                    for o in 0..outer {
                        for i in 0..len {
                            for j in 0..inner {
                                d[(o * len + i) * inner + j] += inv * g[o * inner + j];
                            }
                        }
                    }
                }
            }
            Op::WeightedSum { x, w, axis } => {
                let xv = sink.val(*x).clone();
                let wv = sink.val(*w).clone();
                let (outer, len, inner) = split_axis(xv.shape(), *axis);
                if let Some(d) = sink.slot(*x) {
                    for o in 0..outer {
                        for i in 0..len {
                            let wi = wv.data()[i];
                            for j in 0..inner {
                                d[(o * len + i) * inner + j] += wi * g[o * inner + j];
                            }
                        }
                    }
                }
                if let Some(d) = sink.slot(*w) {
                    let xd = xv.data();
                    for o in 0..outer {
                        for (i, di) in d.iter_mut().enumerate() {
                            let base = (o * len + i) * inner;
                            *di += (0..inner).map(|j| g[o * inner + j] * xd[base + j]).sum::<f64>();
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = sink.slot(*x) {
                    for v in d.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = sink.val(p).shape()[*axis];
                    if let Some(d) = sink.slot(p) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            axpy(&mut d[dst..dst + len * inner], &g[src..src + len * inner], 1.0);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let full = sink.val(*x).shape()[*axis];
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                if let Some(d) = sink.slot(*x) {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        axpy(&mut d[dst..dst + len * inner], &g[src..src + len * inner], 1.0);
                    }
                }
            }
            Op::Conv1d { x, kernel } => conv1d_backward(&mut sink, *x, *kernel, out, g),
            Op::Conv3d { x, kernel, geom } => {
                let kv = sink.val(*kernel).clone();
                let kmat = MatRef::row_major(kv.data(), geom.cols(), geom.c_out);
                let gmat = MatRef::row_major(g, geom.rows(), geom.c_out);
                if sink.nodes[kernel.0].requires_grad {
                    let cols = geom.im2col(sink.val(*x).data());
                    let d = sink.slot(*kernel).expect("tracked kernel");
                    let cm = MatRef::row_major(&cols, geom.rows(), geom.cols());
                    gemm(cm.t(), gmat, d, geom.c_out, 1, true);
                }
                if let Some(d) = sink.slot(*x) {
                    let mut dcols = vec![0.0; geom.rows() * geom.cols()];
                    gemm(gmat, kmat.t(), &mut dcols, geom.cols(), 1, false);
                    geom.col2im(&dcols, d);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if let Some(d) = sink.slot(*logits) {
                    let b = targets.len();
                    let c = probs.len() / b;
                    let scale = g[0] / b as f64;
                    for (row, &t) in targets.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == t { 1.0 } else { 0.0 };
                            d[row * c + k] += scale * (probs[row * c + k] - onehot);
                        }
                    }
                }
            }
        }
    }
}

fn axpy(d: &mut [f64], g: &[f64], s: f64) {
    for (d, g) in d.iter_mut().zip(g) {
        *d += s * g;
    }
}

fn matmul_backward(sink: &mut Sink, a: Var, b: Var, plan: &MatMulPlan, g: &[f64]) {
    let av = sink.val(a).clone();
    let bv = sink.val(b).clone();
    match *plan {
        MatMulPlan::Flat { rows, k, n } => {
            let gm = MatRef::row_major(g, rows, n);
            if let Some(d) = sink.slot(a) {
                gemm(gm, MatRef::row_major(bv.data(), k, n).t(), d, k, 1, true);
            }
            if let Some(d) = sink.slot(b) {
                gemm(MatRef::row_major(av.data(), rows, k).t(), gm, d, n, 1, true);
            }
        }
        MatMulPlan::Batched { m, k, n, ref pairs } => {
            let (sa, sb, so) = (m * k, k * n, m * n);
            if let Some(d) = sink.slot(a) {
                for (i, &(ia, ib)) in pairs.iter().enumerate() {
                    let gm = MatRef::row_major(&g[i * so..(i + 1) * so], m, n);
                    let bm = MatRef::row_major(&bv.data()[ib * sb..(ib + 1) * sb], k, n);
                    gemm(gm, bm.t(), &mut d[ia * sa..(ia + 1) * sa], k, 1, true);
                }
            }
            if let Some(d) = sink.slot(b) {
                for (i, &(ia, ib)) in pairs.iter().enumerate() {
                    let gm = MatRef::row_major(&g[i * so..(i + 1) * so], m, n);
                    let am = MatRef::row_major(&av.data()[ia * sa..(ia + 1) * sa], m, k);
                    gemm(am.t(), gm, &mut d[ib * sb..(ib + 1) * sb], n, 1, true);
                }
            }
        }
    }
}

fn conv1d_backward(sink: &mut Sink, x: Var, kernel: Var, out: &Tensor, g: &[f64]) {
    let xv = sink.val(x).clone();
    let kv = sink.val(kernel).clone();
    let xs = xv.shape();
    let r = xs.len();
    let (l, c_in) = (xs[r - 2], xs[r - 1]);
    let (k, c_out) = (kv.shape()[0], kv.shape()[2]);
    let l_out = out.shape()[r - 2];
    let batches = xv.numel() / (l * c_in);
    if let Some(d) = sink.slot(kernel) {
        for p in 0..batches {
            let win = MatRef {
                data: &xv.data()[p * l * c_in..],
                rows: l_out,
                cols: k * c_in,
                rs: c_in,
                cs: 1,
            };
            let gm = MatRef::row_major(&g[p * l_out * c_out..(p + 1) * l_out * c_out], l_out, c_out);
            gemm(win.t(), gm, d, c_out, 1, true);
        }
    }
    if let Some(d) = sink.slot(x) {
        for p in 0..batches {
            let gm = MatRef::row_major(&g[p * l_out * c_out..(p + 1) * l_out * c_out], l_out, c_out);
            for j in 0..k {
                let kj = MatRef::row_major(&kv.data()[j * c_in * c_out..(j + 1) * c_in * c_out], c_in, c_out);
                let base = p * l * c_in + j * c_in;
                gemm(gm, kj.t(), &mut d[base..], c_in, 1, true);
            }
        }
    }
}

/// For each linear index of the permuted output, the source linear index.
fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(shape_err(op, format!("axis {axis} invalid for shape {shape:?}")));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

fn zip_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape preserved")
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let out = zip_binary(av, bv, |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av, bv)?;
        let out = zip_binary(av, bv, |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let out = zip_binary(av, bv, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// `x + b` with `b` broadcast along every axis but the last.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = *xv.shape().last().unwrap_or(&1);
        if bv.rank() != 1 || bv.numel() != n {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} does not match last extent of {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        self.push("add_bias", out, Op::AddBias(x, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = map_unary(self.value(x), |v| s * v);
        self.push("scale", out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = map_unary(self.value(x), |v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map_unary(self.value(x), stable_sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = map_unary(self.value(x), f64::tanh);
        self.push("tanh", out, Op::Tanh(x))
    }

    /// Matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let mismatch = || shape_err("matmul", format!("cannot multiply {sa:?} by {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        if sb.len() == 2 {
            let rows = av.numel() / k;
            let mut data = vec![0.0; rows * n];
            gemm(
                MatRef::row_major(av.data(), rows, k),
                MatRef::row_major(bv.data(), k, n),
                &mut data,
                n,
                1,
                false,
            );
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            let out = Tensor::new(&shape, data)?;
            return self.push("matmul", out, Op::MatMul { a, b, plan: MatMulPlan::Flat { rows, k, n } });
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(mismatch());
            }
            batch.push(x.max(y));
        }
        let count: usize = batch.iter().product();
        let mut pairs = Vec::with_capacity(count);
        let mut idx = vec![0usize; rank];
        for _ in 0..count {
            let (mut ia, mut ib) = (0, 0);
            for d in 0..rank {
                ia = ia * pa[d] + if pa[d] == 1 { 0 } else { idx[d] };
                ib = ib * pb[d] + if pb[d] == 1 { 0 } else { idx[d] };
            }
            pairs.push((ia, ib));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < batch[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let (sza, szb, szo) = (m * k, k * n, m * n);
        let mut data = vec![0.0; count * szo];
        for (i, &(ia, ib)) in pairs.iter().enumerate() {
            gemm(
                MatRef::row_major(&av.data()[ia * sza..(ia + 1) * sza], m, k),
                MatRef::row_major(&bv.data()[ib * szb..(ib + 1) * szb], k, n),
                &mut data[i * szo..(i + 1) * szo],
                n,
                1,
                false,
            );
        }
        let mut shape = batch;
        shape.extend_from_slice(&[m, n]);
        let out = Tensor::new(&shape, data)?;
        self.push("matmul", out, Op::MatMul { a, b, plan: MatMulPlan::Batched { m, k, n, pairs } })
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err("permute", format!("axes {axes:?} invalid for shape {shape:?}")));
        }
        let map = permute_map(shape, axes);
        let data = map.iter().map(|&i| xv.data()[i]).collect();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = Tensor::new(&out_shape, data)?;
        self.push("permute", out, Op::Permute { x, axes: axes.to_vec() })
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a0: usize, a1: usize) -> Result<Var> {
        let rank = self.value(x).rank();
        check_axis("transpose", self.shape(x), a0.max(a1))?;
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a0, a1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// Collapses all axes into one.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.reshape(x, &[n])
    }

    /// Softmax along `axis`, computed after subtracting each slice's maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        check_axis("softmax", xv.shape(), axis)?;
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| src[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for i in 0..len {
                    let e = (src[idx(i)] - max).exp();
                    data[idx(i)] = e;
                    sum += e;
                }
                for i in 0..len {
                    data[idx(i)] /= sum;
                }
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        self.push("softmax", out, Op::Softmax { x, axis })
    }

    /// Standardizes each slice along `axis` to zero mean and unit variance;
    /// `eps` is added to the variance under the square root. No affine terms.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        check_axis("layer_norm", xv.shape(), axis)?;
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        if len < 2 {
            return Err(shape_err("layer_norm", format!("extent {len} along axis {axis} is below 2")));
        }
        let src = xv.data();
        let mut data = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; outer * inner];
        let n = len as f64;
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let mean = (0..len).map(|i| src[idx(i)]).sum::<f64>() / n;
                let var = (0..len).map(|i| (src[idx(i)] - mean).powi(2)).sum::<f64>() / n;
                let r = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + j] = r;
                for i in 0..len {
                    data[idx(i)] = (src[idx(i)] - mean) * r;
                }
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        self.push("layer_norm", out, Op::LayerNorm { x, axis, inv_std })
    }

    /// Arithmetic mean along `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        check_axis("mean", xv.shape(), axis)?;
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let inv = 1.0 / len as f64;
        let weights = vec![inv; len];
        let data = weighted_reduce(xv.data(), &weights, outer, len, inner);
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        self.push("mean", out, Op::Mean { x, axis })
    }

    /// `Σ_i w[i] · x[.., i, ..]` along `axis`, which is removed from the shape.
    /// Terms accumulate in index order, so uniform weights of `1/len` give
    /// exactly the same result as [`Tape::mean`].
    pub fn weighted_sum(&mut self, x: Var, w: Var, axis: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        check_axis("weighted_sum", xv.shape(), axis)?;
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        if wv.rank() != 1 || wv.numel() != len {
            return Err(shape_err(
                "weighted_sum",
                format!("weights {:?} do not match axis {axis} of {:?}", wv.shape(), xv.shape()),
            ));
        }
        let data = weighted_reduce(xv.data(), wv.data(), outer, len, inner);
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        self.push("weighted_sum", out, Op::WeightedSum { x, w, axis })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat", "nothing to concatenate"))?;
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("shapes {base:?} and {s:?} differ off axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = vec![0.0; shape.iter().product()];
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let len = pv.shape()[axis];
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                data[dst..dst + len * inner].copy_from_slice(&pv.data()[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        let out = Tensor::new(&shape, data)?;
        self.push("concat", out, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Contiguous range `start..start + len` along `axis` (axis kept).
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        check_axis("slice", xv.shape(), axis)?;
        let full = xv.shape()[axis];
        if len == 0 || start + len > full {
            return Err(shape_err("slice", format!("range {start}..{} exceeds extent {full}", start + len)));
        }
        let (outer, _, inner) = split_axis(xv.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * full + start) * inner;
            data.extend_from_slice(&xv.data()[src..src + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        self.push("slice", out, Op::Slice { x, axis, start })
    }

    /// Single index along `axis`, which is removed from the shape.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.slice(x, axis, index, 1)?;
        let mut shape = self.shape(x).to_vec();
        shape.remove(axis);
        self.reshape(s, &shape)
    }

    /// Valid 1-D cross-correlation with stride 1 and no bias:
    /// `x [.., L, C_in]` with `kernel [k, C_in, C_out]` gives `[.., L-k+1, C_out]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let xs = xv.shape();
        let ks = kv.shape();
        if xs.len() < 2 || ks.len() != 3 || ks[1] != xs[xs.len() - 1] {
            return Err(shape_err("conv1d", format!("input {xs:?} incompatible with kernel {ks:?}")));
        }
        let r = xs.len();
        let (l, c_in) = (xs[r - 2], xs[r - 1]);
        let (k, c_out) = (ks[0], ks[2]);
        if l < k {
            return Err(shape_err("conv1d", format!("length {l} shorter than kernel {k}")));
        }
        let l_out = l - k + 1;
        let batches = xv.numel() / (l * c_in);
        let kmat = MatRef::row_major(kv.data(), k * c_in, c_out);
        let mut data = vec![0.0; batches * l_out * c_out];
        for p in 0..batches {
            let win = MatRef {
                data: &xv.data()[p * l * c_in..],
                rows: l_out,
                cols: k * c_in,
                rs: c_in,
                cs: 1,
            };
            gemm(win, kmat, &mut data[p * l_out * c_out..(p + 1) * l_out * c_out], c_out, 1, false);
        }
        let mut shape = xs.to_vec();
        shape[r - 2] = l_out;
        shape[r - 1] = c_out;
        let out = Tensor::new(&shape, data)?;
        self.push("conv1d", out, Op::Conv1d { x, kernel })
    }

    /// 3-D convolution over channels-last `[S, T, W, H, C_in]` with a
    /// `[3, 3, 3, C_in, C_out]` kernel: temporal stride 1, spatial stride 2,
    /// zero padding 1 on every axis. Output `[S, T, ⌈W/2⌉, ⌈H/2⌉, C_out]`.
    pub fn conv3d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let xs = xv.shape();
        let ks = kv.shape();
        if xs.len() != 5 || ks.len() != 5 || ks[..3] != [3, 3, 3] || ks[3] != xs[4] {
            return Err(shape_err("conv3d", format!("input {xs:?} incompatible with kernel {ks:?}")));
        }
        let geom = Conv3dGeom {
            s: xs[0],
            t: xs[1],
            w: xs[2],
            h: xs[3],
            c_in: xs[4],
            c_out: ks[4],
            w_out: (xs[2] - 1) / 2 + 1,
            h_out: (xs[3] - 1) / 2 + 1,
        };
        let cols = geom.im2col(xv.data());
        let mut data = vec![0.0; geom.rows() * geom.c_out];
        gemm(
            MatRef::row_major(&cols, geom.rows(), geom.cols()),
            MatRef::row_major(kv.data(), geom.cols(), geom.c_out),
            &mut data,
            geom.c_out,
            1,
            false,
        );
        let out = Tensor::new(&[geom.s, geom.t, geom.w_out, geom.h_out, geom.c_out], data)?;
        self.push("conv3d", out, Op::Conv3d { x, kernel, geom })
    }

    /// Mean softmax cross-entropy of `logits [B, C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let s = lv.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {s:?} do not match {} targets", targets.len()),
            ));
        }
        let c = s[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Contract(format!("target class {t} out of range for {c} logits")));
        }
        let mut probs = vec![0.0; lv.numel()];
        let mut loss = 0.0;
        for (row, &t) in targets.iter().enumerate() {
            let z = &lv.data()[row * c..(row + 1) * c];
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for k in 0..c {
                probs[row * c + k] = (z[k] - max - lse).exp();
            }
            loss -= z[t] - max - lse;
        }
        loss /= targets.len() as f64;
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }
}

fn weighted_reduce(src: &[f64], w: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        for (i, &wi) in w.iter().enumerate().take(len) {
            let base = (o * len + i) * inner;
            for j in 0..inner {
                data[o * inner + j] += wi * src[base + j];
            }
        }
    }
    data
}
