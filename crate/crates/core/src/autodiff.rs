//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in evaluation order, so node ids are
//! already a topological order and the backward sweep is a single reverse
//! scan. Values are computed eagerly; each node keeps its output, which is
//! all the backward rules below need.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves the spatial extent.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { differentiable: bool },
    Affine { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Conv2d { x: Var, k: Var, padding: Padding },
    ChannelBias { x: Var, b: Var },
    GlobalAvgPool { x: Var },
    Flatten { x: Var },
    LogSoftmax { x: Var },
    CrossEntropy { logp: Var, labels: Vec<usize> },
    KlDiv { logp: Var, logq: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Sum { a: Var },
    WeightedSum { a: Var, w: Tensor },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Single-owner operation record.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; a leaf the root does not depend on gets zeros.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn dims_err(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::DimensionMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        debug_assert!(value.all_finite(), "non-finite value from {:?}", op);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiation target (parameter or input).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf { differentiable: true }, t)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf { differentiable: false }, t)
    }

    /// `x[B,i] @ w[i,o] + b[o]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(dims_err("affine", xv, wv));
        }
        let (rows, din, dout) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [dout] {
            return Err(dims_err("affine bias", wv, bv));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = Vec::with_capacity(rows * dout);
        for i in 0..rows {
            let mut acc = bd.to_vec();
            let xr = &xd[i * din..(i + 1) * din];
            for (k, &xk) in xr.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let wr = &wd[k * dout..(k + 1) * dout];
                for (a, &w) in acc.iter_mut().zip(wr) {
                    *a += xk * w;
                }
            }
            out.extend_from_slice(&acc);
        }
        let value = Tensor::new(vec![rows, dout], out)?;
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu { x }, value)
    }

    /// Stride-1 cross-correlation of `x[B,C,H,W]` with `k[F,C,kh,kw]`, odd kernels only.
    pub fn conv2d(&mut self, x: Var, k: Var, padding: Padding) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(k));
        let geom = ConvGeom::new(xv, kv, padding)?;
        let mut out = vec![0.0; geom.b * geom.f * geom.oh * geom.ow];
        let (xd, kd) = (xv.data(), kv.data());
        geom.for_each_tap(|o, xi, ki| out[o] += xd[xi] * kd[ki]);
        let value = Tensor::new(vec![geom.b, geom.f, geom.oh, geom.ow], out)?;
        Ok(self.push(Op::Conv2d { x, k, padding }, value))
    }

    /// Adds `b[F]` to every spatial position of channel `f` in `x[B,F,H,W]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if xv.shape().len() != 4 || bv.shape() != [xv.shape()[1]] {
            return Err(dims_err("channel_bias", xv, bv));
        }
        let (f, hw) = (xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
        let mut value = xv.clone();
        let bd = bv.data().to_vec();
        for (i, chunk) in value.data_mut().chunks_mut(hw).enumerate() {
            let bias = bd[i % f];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        Ok(self.push(Op::ChannelBias { x, b }, value))
    }

    /// Mean over spatial axes: `[B,C,H,W] -> [B,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(dims_err("global_avg_pool", xv, xv));
        }
        let (b, c, hw) = (xv.shape()[0], xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
        let out: Vec<f64> = xv
            .data()
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(Op::GlobalAvgPool { x }, value))
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = xv
            .reshape(&[xv.batch(), xv.row_len()])
            .expect("flatten preserves length");
        self.push(Op::Flatten { x }, value)
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || xv.shape()[1] < 2 {
            return Err(dims_err("log_softmax", xv, xv));
        }
        let k = xv.shape()[1];
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(k) {
            out.extend_from_slice(&log_softmax_row(row));
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(Op::LogSoftmax { x }, value))
    }

    /// Mean over the batch of `-logp[i, labels[i]]`.
    pub fn cross_entropy(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logp);
        if lv.shape().len() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let k = lv.shape()[1];
        check_labels(labels, k)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -lv.data()[i * k + y])
            .sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(
            Op::CrossEntropy {
                logp,
                labels: labels.to_vec(),
            },
            value,
        ))
    }

    /// Mean over the batch of `KL(p || q)` with both arguments given as log-probabilities.
    pub fn kl_div(&mut self, logp: Var, logq: Var) -> Result<Var> {
        let (pv, qv) = (self.value(logp), self.value(logq));
        if pv.shape() != qv.shape() || pv.shape().len() != 2 {
            return Err(dims_err("kl_div", pv, qv));
        }
        let value = Tensor::scalar(kl_rows(pv.data(), qv.data(), pv.shape()[1]));
        Ok(self.push(Op::KlDiv { logp, logq }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| c * v);
        self.push(Op::Scale { a, c }, value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum { a }, value)
    }

    /// `sum(a * w)` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, a: Var, w: Tensor) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).dot(&w)?);
        Ok(self.push(Op::WeightedSum { a, w }, value))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: rv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(rv.shape()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let g = match &node.op {
                Op::Leaf { differentiable } => {
                    if !differentiable {
                        grads[i] = None;
                    }
                    continue;
                }
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, din, dout) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = vec![0.0; rows * din];
                let mut dw = vec![0.0; din * dout];
                let mut db = vec![0.0; dout];
                for i in 0..rows {
                    let gr = &gd[i * dout..(i + 1) * dout];
                    for (d, &v) in db.iter_mut().zip(gr) {
                        *d += v;
                    }
                    for k in 0..din {
                        let wr = &wd[k * dout..(k + 1) * dout];
                        dx[i * din + k] = wr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let xk = xd[i * din + k];
                        if xk != 0.0 {
                            for (d, &v) in dw[k * dout..(k + 1) * dout].iter_mut().zip(gr) {
                                *d += xk * v;
                            }
                        }
                    }
                }
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), dx).unwrap());
                accumulate(&mut grads[w.0], Tensor::new(wv.shape().to_vec(), dw).unwrap());
                accumulate(&mut grads[b.0], Tensor::new(vec![dout], db).unwrap());
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let dx = xv
                    .zip_map(g, "relu", |v, gv| if v > 0.0 { gv } else { 0.0 })
                    .unwrap();
                accumulate(&mut grads[x.0], dx);
            }
            Op::Conv2d { x, k, padding } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let geom = ConvGeom::new(xv, kv, *padding).unwrap();
                let (xd, kd) = (xv.data(), kv.data());
                let mut dx = vec![0.0; xv.len()];
                let mut dk = vec![0.0; kv.len()];
                geom.for_each_tap(|o, xi, ki| {
                    dx[xi] += gd[o] * kd[ki];
                    dk[ki] += gd[o] * xd[xi];
                });
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), dx).unwrap());
                accumulate(&mut grads[k.0], Tensor::new(kv.shape().to_vec(), dk).unwrap());
            }
            Op::ChannelBias { x, b } => {
                let xv = self.value(*x);
                let (f, hw) = (xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
                let mut db = vec![0.0; f];
                for (i, chunk) in gd.chunks(hw).enumerate() {
                    db[i % f] += chunk.iter().sum::<f64>();
                }
                accumulate(&mut grads[x.0], g.clone());
                accumulate(&mut grads[b.0], Tensor::new(vec![f], db).unwrap());
            }
            Op::GlobalAvgPool { x } => {
                let xv = self.value(*x);
                let hw = xv.shape()[2] * xv.shape()[3];
                let inv = 1.0 / hw as f64;
                let dx: Vec<f64> = gd.iter().flat_map(|&v| core::iter::repeat_n(v * inv, hw)).collect();
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), dx).unwrap());
            }
            Op::Flatten { x } => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(&mut grads[x.0], g.reshape(&shape).unwrap());
            }
            Op::LogSoftmax { x } => {
                let out = node.value.data();
                let k = node.value.shape()[1];
                let mut dx = Vec::with_capacity(out.len());
                for (orow, grow) in out.chunks(k).zip(gd.chunks(k)) {
                    let gsum: f64 = grow.iter().sum();
                    dx.extend(orow.iter().zip(grow).map(|(&o, &gv)| gv - libm::exp(o) * gsum));
                }
                accumulate(&mut grads[x.0], Tensor::new(node.value.shape().to_vec(), dx).unwrap());
            }
            Op::CrossEntropy { logp, labels } => {
                let lv = self.value(*logp);
                let k = lv.shape()[1];
                let scale = -gd[0] / labels.len() as f64;
                let mut d = vec![0.0; lv.len()];
                for (i, &y) in labels.iter().enumerate() {
                    d[i * k + y] = scale;
                }
                accumulate(&mut grads[logp.0], Tensor::new(lv.shape().to_vec(), d).unwrap());
            }
            Op::KlDiv { logp, logq } => {
                let (pv, qv) = (self.value(*logp), self.value(*logq));
                let scale = gd[0] / pv.shape()[0] as f64;
                let mut dp = Vec::with_capacity(pv.len());
                let mut dq = Vec::with_capacity(pv.len());
                for (&lp, &lq) in pv.data().iter().zip(qv.data()) {
                    let p = libm::exp(lp);
                    dp.push(scale * p * (lp - lq + 1.0));
                    dq.push(-scale * p);
                }
                accumulate(&mut grads[logp.0], Tensor::new(pv.shape().to_vec(), dp).unwrap());
                accumulate(&mut grads[logq.0], Tensor::new(qv.shape().to_vec(), dq).unwrap());
            }
            Op::Add { a, b } => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.clone());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(&mut grads[a.0], g.zip_map(bv, "mul", |x, y| x * y).unwrap());
                accumulate(&mut grads[b.0], g.zip_map(av, "mul", |x, y| x * y).unwrap());
            }
            Op::Scale { a, c } => {
                accumulate(&mut grads[a.0], g.map(|v| c * v));
            }
            Op::Sum { a } => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(&mut grads[a.0], Tensor::full(&shape, gd[0]));
            }
            Op::WeightedSum { a, w } => {
                accumulate(&mut grads[a.0], w.map(|v| gd[0] * v));
            }
        }
    }
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::InvalidLabel {
            index,
            label,
            classes,
        });
    }
    Ok(())
}

/// Stable log-softmax of one row.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = libm::log(row.iter().map(|&z| libm::exp(z - m)).sum::<f64>());
    row.iter().map(|&z| z - m - lse).collect()
}

/// Batch-mean KL divergence of row-major log-probability matrices.
pub fn kl_rows(logp: &[f64], logq: &[f64], k: usize) -> f64 {
    let rows = logp.len() / k;
    let total: f64 = logp
        .chunks(k)
        .zip(logq.chunks(k))
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .map(|(&lp, &lq)| libm::exp(lp) * (lp - lq))
                .sum::<f64>()
        })
        .sum();
    total / rows as f64
}

struct ConvGeom {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    ph: usize,
    pw: usize,
}

impl ConvGeom {
    fn new(x: &Tensor, k: &Tensor, padding: Padding) -> Result<Self> {
        let (xs, ks) = (x.shape(), k.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(dims_err("conv2d", x, k));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, kh, kw) = (ks[0], ks[2], ks[3]);
        let (ph, pw) = match padding {
            Padding::Same => (kh / 2, kw / 2),
            Padding::Valid => (0, 0),
        };
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(dims_err("conv2d", x, k));
        }
        Ok(Self {
            b,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh: h + 2 * ph - kh + 1,
            ow: w + 2 * pw - kw + 1,
            ph,
            pw,
        })
    }

    /// Calls `tap(out_index, x_index, k_index)` for every in-bounds product.
    fn for_each_tap(&self, mut tap: impl FnMut(usize, usize, usize)) {
        for bi in 0..self.b {
            for fi in 0..self.f {
                for ci in 0..self.c {
                    for u in 0..self.kh {
                        for v in 0..self.kw {
                            let ki = ((fi * self.c + ci) * self.kh + u) * self.kw + v;
                            for i in 0..self.oh {
                                let r = i + u;
                                if r < self.ph || r - self.ph >= self.h {
                                    continue;
                                }
                                let xrow = ((bi * self.c + ci) * self.h + (r - self.ph)) * self.w;
                                let orow = ((bi * self.f + fi) * self.oh + i) * self.ow;
                                for j in 0..self.ow {
                                    let s = j + v;
                                    if s < self.pw || s - self.pw >= self.w {
                                        continue;
                                    }
                                    tap(orow + j, xrow + s - self.pw, ki);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Central-difference gradient check.
///
/// `f` builds a scalar root on a fresh tape from a leaf holding the point.
/// Returns the largest coordinate-wise error `|a - n| / max(|a|, |n|, s)`,
/// where `s` is the largest gradient magnitude, so coordinates with tiny
/// gradients are judged against the gradient's scale.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let leaf = tape.leaf(point.clone());
    let root = f(&mut tape, leaf)?;
    let analytic = tape.backward(root)?.wrt(leaf);

    let eval = |p: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let l = t.leaf(p);
        let r = f(&mut t, l)?;
        Ok(t.value(r).data()[0])
    };
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    Ok(max_relative_error(analytic.data(), &numeric))
}

/// Scale-aware max relative error used by [`grad_check`].
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(scale))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn affine_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1., 2.]));
        let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let zb = tape.constant(t(&[2], &[0., 0.]));
        let y = tape.affine(x, eye, zb).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2.]);

        let w = tape.constant(t(&[2, 1], &[3., 4.]));
        let b = tape.constant(t(&[1], &[1.]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[12.]);

        let z = tape.constant(Tensor::zeros(&[1, 2]));
        let b2 = tape.constant(t(&[2], &[5., 6.]));
        let y = tape.affine(z, eye, b2).unwrap();
        assert_eq!(tape.value(y).data(), &[5., 6.]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        match tape.affine(x, w, b) {
            Err(Error::DimensionMismatch { left, right, .. }) => {
                assert_eq!(left, vec![1, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1., 0., 2.]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.5, 1., 3.]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.5, 1., 3.]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[3., -3.]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[1., 0.]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[0.]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[0.]);
    }

    #[test]
    fn conv_examples() {
        let mut tape = Tape::new();
        let img = t(&[1, 1, 3, 4], &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]);
        let x = tape.constant(img.clone());
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.]));
        let y = tape.conv2d(x, k, Padding::Same).unwrap();
        assert_eq!(tape.value(y), &img);

        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, k, Padding::Valid).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.]);

        let x = tape.constant(Tensor::ones(&[2, 3, 8, 8]));
        let k = tape.constant(Tensor::ones(&[4, 3, 3, 3]));
        let y = tape.conv2d(x, k, Padding::Same).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 4, 8, 8]);
        // Corner of a same-padded all-ones conv sees a 2x2 window per channel.
        assert_eq!(tape.value(y).data()[0], 12.);
    }

    #[test]
    fn conv_rejects_bad_kernels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let k3 = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        assert!(tape.conv2d(x, k3, Padding::Valid).is_err());
        let k2 = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        assert!(tape.conv2d(x, k2, Padding::Same).is_err());
        let kc = tape.constant(Tensor::ones(&[1, 2, 1, 1]));
        assert!(tape.conv2d(x, kc, Padding::Same).is_err());
    }

    #[test]
    fn pooling_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 2, 3, 3], 0.3));
        let p = tape.global_avg_pool(x).unwrap();
        for v in tape.value(p).data() {
            assert!((v - 0.3).abs() < 1e-15);
        }
        let x = tape.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p).data(), &[2.5]);
        let x = tape.constant(t(&[1, 3, 1, 1], &[0.1, -2., 7.]));
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p).data(), &[0.1, -2., 7.]);
    }

    #[test]
    fn log_softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[0., 0.]));
        let y = tape.log_softmax(x).unwrap();
        let ln2 = core::f64::consts::LN_2;
        assert!(tape.value(y).data().iter().all(|v| (v + ln2).abs() < 1e-15));

        let x = tape.constant(t(&[1, 2], &[1000., 0.]));
        let y = tape.log_softmax(x).unwrap();
        let d = tape.value(y).data();
        // log(1 + e^-1000) underflows to exactly 0 in double precision.
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], -1000.0);
    }

    #[test]
    fn backward_of_sum_is_ones_and_unused_leaf_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 3], 0.7));
        let unused = tape.leaf(Tensor::ones(&[4]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x), Tensor::ones(&[2, 3]));
        assert_eq!(g.wrt(unused), Tensor::zeros(&[4]));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn grad_check_on_quadratic_and_linear() {
        let p = t(&[4], &[0.3, -1.2, 2.5, 0.0]);
        let quad = grad_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                Ok(tape.sum(sq))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(quad <= 1e-9, "quadratic grad check error {quad}");

        let w = t(&[4], &[1.5, -2.0, 0.25, 3.0]);
        let lin = grad_check(move |tape, x| tape.weighted_sum(x, w.clone()), &p, 1e-5).unwrap();
        assert!(lin <= 1e-10, "linear grad check error {lin}");
    }
}
