//! Input-space curvature: Fisher information, the exact cross-entropy Hessian,
//! KL Taylor expectations and the first-order loss-deviation bound.
//!
//! All routines act on a single example `x` of shape `[1, C, H, W]` and treat
//! its flattened pixels as the coordinates.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{kl_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest input dimension for dense `d x d` objects.
pub const DIM_CAP: usize = 256;

const KL_CHUNK: usize = 1024;

/// Dense row-major `d x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DataLength {
                shape: vec![dim, dim],
                len: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.dim).map(|row| dot(row, v)).collect()
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(&self.matvec(v), v)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &SquareMatrix) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                op: "max_abs_diff",
                left: vec![self.dim],
                right: vec![other.dim],
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Largest `|M_ij - M_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Rows `d log p_k / dx` for every class, with the probabilities they were taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbJacobian {
    classes: usize,
    dim: usize,
    rows: Vec<f64>,
    probs: Vec<f64>,
}

impl LogProbJacobian {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `sum_k p_k * row_k`, which vanishes for exact rows.
    pub fn weighted_row_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for k in 0..self.classes {
            for (acc, v) in s.iter_mut().zip(self.row(k)) {
                *acc += self.probs[k] * v;
            }
        }
        s
    }

    /// `Tr(G) = sum_k p_k |row_k|^2`.
    pub fn fim_trace(&self) -> f64 {
        (0..self.classes)
            .map(|k| self.probs[k] * dot(self.row(k), self.row(k)))
            .sum()
    }

    /// `G v` without forming `G`.
    pub fn fim_matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for k in 0..self.classes {
            let c = self.probs[k] * dot(self.row(k), v);
            for (o, r) in out.iter_mut().zip(self.row(k)) {
                *o += c * r;
            }
        }
        out
    }

    pub fn fim(&self) -> SquareMatrix {
        let d = self.dim;
        let mut m = SquareMatrix::zeros(d);
        for k in 0..self.classes {
            let r = self.row(k);
            let p = self.probs[k];
            for i in 0..d {
                let pi = p * r[i];
                if pi == 0.0 {
                    continue;
                }
                for (out, &rj) in m.data[i * d..(i + 1) * d].iter_mut().zip(r) {
                    *out += pi * rj;
                }
            }
        }
        m
    }
}

fn check_single(x: &Tensor, cap: usize) -> Result<usize> {
    if x.shape().len() != 4 || x.batch() != 1 {
        return Err(Error::DimensionMismatch {
            op: "single example",
            left: x.shape().to_vec(),
            right: vec![1],
        });
    }
    let d = x.len();
    if d > cap {
        return Err(Error::DimensionCap { dim: d, cap });
    }
    Ok(d)
}

/// K reverse passes over one tape: row `k` is the input gradient of `out[0, k]`.
fn input_jacobian(model: &Model, x: &Tensor, log_probs: bool, cap: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = check_single(x, cap)?;
    let k = model.num_classes();
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let xv = tape.leaf(x.clone());
    let logits = model.forward(&mut tape, &params, xv)?;
    let lp = tape.log_softmax(logits)?;
    let out = if log_probs { lp } else { logits };
    let mut rows = Vec::with_capacity(k * d);
    for c in 0..k {
        let mut w = vec![0.0; k];
        w[c] = 1.0;
        let root = tape.weighted_sum(out, Tensor::new(vec![1, k], w)?)?;
        rows.extend_from_slice(tape.backward(root)?.wrt(xv).data());
    }
    let probs = tape.value(lp).data().iter().map(|v| libm::exp(*v)).collect();
    Ok((rows, probs))
}

pub fn logprob_jacobian(model: &Model, x: &Tensor) -> Result<LogProbJacobian> {
    logprob_jacobian_capped(model, x, DIM_CAP)
}

pub fn logprob_jacobian_capped(model: &Model, x: &Tensor, cap: usize) -> Result<LogProbJacobian> {
    let (rows, probs) = input_jacobian(model, x, true, cap)?;
    Ok(LogProbJacobian {
        classes: model.num_classes(),
        dim: x.len(),
        rows,
        probs,
    })
}

/// `G = sum_k p_k grad log p_k grad log p_k^T`.
pub fn fim(model: &Model, x: &Tensor) -> Result<SquareMatrix> {
    Ok(logprob_jacobian(model, x)?.fim())
}

/// `H = J^T (diag p - p p^T) J` with `J` the logit Jacobian; `label` is range-checked only.
pub fn hessian_ce(model: &Model, x: &Tensor, label: usize) -> Result<SquareMatrix> {
    let k = model.num_classes();
    crate::autodiff::check_labels(&[label], k)?;
    let (j, p) = input_jacobian(model, x, false, DIM_CAP)?;
    let d = x.len();
    // A J, where A = diag p - p p^T.
    let mut pj = vec![0.0; d];
    for c in 0..k {
        for (acc, v) in pj.iter_mut().zip(&j[c * d..(c + 1) * d]) {
            *acc += p[c] * v;
        }
    }
    let mut aj = vec![0.0; k * d];
    for c in 0..k {
        for i in 0..d {
            aj[c * d + i] = p[c] * (j[c * d + i] - pj[i]);
        }
    }
    let mut h = SquareMatrix::zeros(d);
    for c in 0..k {
        let jr = &j[c * d..(c + 1) * d];
        let ar = &aj[c * d..(c + 1) * d];
        for a in 0..d {
            let ja = jr[a];
            if ja == 0.0 {
                continue;
            }
            for (out, &v) in h.data[a * d..(a + 1) * d].iter_mut().zip(ar) {
                *out += ja * v;
            }
        }
    }
    Ok(h)
}

/// Cross-entropy of one example and its input gradient.
pub fn input_gradient(model: &Model, x: &Tensor, label: usize) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let xv: Var = tape.leaf(x.clone());
    let lp = model.forward_log_probs(&mut tape, &params, xv)?;
    let ce = tape.cross_entropy(lp, &[label])?;
    let g = tape.backward(ce)?.wrt(xv);
    Ok((tape.value(ce).data()[0], g.into_data()))
}

/// Cross-entropy of one example.
pub fn loss_at(model: &Model, x: &Tensor, label: usize) -> Result<f64> {
    let lp = model.log_probs(x)?;
    crate::autodiff::check_labels(&[label], model.num_classes())?;
    Ok(-lp.data()[label])
}

/// Monte-Carlo KL expectation next to its second-order prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlExpectation {
    pub mc_estimate: f64,
    pub std_err: f64,
    pub analytic: f64,
}

impl KlExpectation {
    pub fn ratio(&self) -> f64 {
        self.mc_estimate / self.analytic
    }
}

/// Mean and standard error of `KL(p(x) || p(x + delta))` over `n` draws, `delta` from `draw`.
fn kl_monte_carlo(model: &Model, x: &Tensor, n: usize, mut draw: impl FnMut(&mut [f64])) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Empty("monte-carlo draws"));
    }
    let d = x.len();
    let k = model.num_classes();
    let clean = model.log_probs(x)?;
    let mut shape = x.shape().to_vec();
    let (mut sum, mut sumsq) = (0.0, 0.0);
    let mut done = 0;
    while done < n {
        let m = KL_CHUNK.min(n - done);
        let mut data = Vec::with_capacity(m * d);
        let mut delta = vec![0.0; d];
        for _ in 0..m {
            draw(&mut delta);
            data.extend(x.data().iter().zip(&delta).map(|(a, b)| a + b));
        }
        shape[0] = m;
        let noisy = model.log_probs(&Tensor::new(shape.clone(), data)?)?;
        for row in noisy.data().chunks(k) {
            let kl = kl_rows(clean.data(), row, k);
            sum += kl;
            sumsq += kl * kl;
        }
        done += m;
    }
    let mean = sum / n as f64;
    let var = if n > 1 {
        ((sumsq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0)
    } else {
        0.0
    };
    Ok((mean, libm::sqrt(var / n as f64)))
}

/// `E KL` under `delta ~ N(0, sigma^2 I)` against `sigma^2 / 2 * Tr(G)`.
pub fn kl_gauss_expectation(model: &Model, x: &Tensor, sigma: f64, n: usize, rng: &mut Rng) -> Result<KlExpectation> {
    let trace = logprob_jacobian(model, x)?.fim_trace();
    let (mc, se) = kl_monte_carlo(model, x, n, |delta| {
        delta.iter_mut().for_each(|v| *v = sigma * rng.normal());
    })?;
    Ok(KlExpectation {
        mc_estimate: mc,
        std_err: se,
        analytic: sigma * sigma / 2.0 * trace,
    })
}

/// `E[sigma^2 / 2]` for `sigma ~ U(0, sigma_max)`.
pub fn uniform_half_second_moment(sigma_max: f64) -> f64 {
    sigma_max * sigma_max / 6.0
}

/// `E KL` under `sigma ~ U(0, sigma_max)`, `delta ~ N(0, sigma^2 I)` against `sigma_max^2 / 6 * Tr(G)`.
pub fn kl_diverse_expectation(model: &Model, x: &Tensor, sigma_max: f64, n: usize, rng: &mut Rng) -> Result<KlExpectation> {
    let trace = logprob_jacobian(model, x)?.fim_trace();
    let (mc, se) = kl_monte_carlo(model, x, n, |delta| {
        let s = sigma_max * rng.uniform();
        delta.iter_mut().for_each(|v| *v = s * rng.normal());
    })?;
    Ok(KlExpectation {
        mc_estimate: mc,
        std_err: se,
        analytic: uniform_half_second_moment(sigma_max) * trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradNormCheck {
    /// `|grad_x L|` from a backward pass through the loss.
    pub lhs: f64,
    /// `sqrt(sum_k y_k |grad_x log p_k|^2)` from the log-probability Jacobian.
    pub rhs: f64,
}

impl GradNormCheck {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Index of the unit entry of a one-hot vector.
pub fn one_hot_index(y: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::NotOneHot);
        }
    }
    hot.ok_or(Error::NotOneHot)
}

pub fn gradnorm_identity_check(model: &Model, x: &Tensor, y: &[f64]) -> Result<GradNormCheck> {
    if y.len() != model.num_classes() {
        return Err(Error::NotOneHot);
    }
    let label = one_hot_index(y)?;
    let (_, g) = input_gradient(model, x, label)?;
    let jac = logprob_jacobian(model, x)?;
    let rhs2: f64 = (0..jac.classes()).map(|k| y[k] * dot(jac.row(k), jac.row(k))).sum();
    Ok(GradNormCheck {
        lhs: norm(&g),
        rhs: libm::sqrt(rhs2),
    })
}

pub const POWER_ITERS: usize = 200;
pub const POWER_TOL: f64 = 1e-10;

/// Dominant eigenvalue of a symmetric PSD matrix by Rayleigh-quotient power iteration
/// from the normalized all-ones vector.
pub fn power_iteration(m: &SquareMatrix, iters: usize, tol: f64) -> f64 {
    let d = m.dim();
    let mut v = vec![1.0 / libm::sqrt(d as f64); d];
    let mut lambda = m.quad_form(&v);
    for _ in 0..iters {
        let w = m.matvec(&v);
        let n = norm(&w);
        if n == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|x| x / n).collect();
        let next = m.quad_form(&v);
        let done = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Mean of `z^T M z` over Rademacher probes.
pub fn hutchinson_trace(
    dim: usize,
    mut matvec: impl FnMut(&[f64]) -> Vec<f64>,
    probes: usize,
    rng: &mut Rng,
) -> Result<TraceEstimate> {
    if probes == 0 {
        return Err(Error::Empty("hutchinson probes"));
    }
    let (mut sum, mut sumsq) = (0.0, 0.0);
    let mut z = vec![0.0; dim];
    for _ in 0..probes {
        z.iter_mut().for_each(|v| *v = rng.sign());
        let s = dot(&z, &matvec(&z));
        sum += s;
        sumsq += s * s;
    }
    let n = probes as f64;
    let mean = sum / n;
    let var = if probes > 1 {
        ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(TraceEstimate {
        mean,
        std_err: libm::sqrt(var / n),
    })
}

/// Second-order model of the loss around one example.
#[derive(Debug, Clone)]
pub struct LocalQuadratic {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub hessian: SquareMatrix,
    pub lambda_max: f64,
    /// `sqrt(sum_k y_k |grad log p_k|^2)`.
    pub grad_bound: f64,
    label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateCheck {
    pub surrogate_lhs: f64,
    pub bound_rhs: f64,
    pub fd_lhs: f64,
}

impl LocalQuadratic {
    pub fn new(model: &Model, x: &Tensor, label: usize) -> Result<Self> {
        let (loss, grad) = input_gradient(model, x, label)?;
        let hessian = hessian_ce(model, x, label)?;
        let jac = logprob_jacobian(model, x)?;
        let lambda_max = power_iteration(&hessian, POWER_ITERS, POWER_TOL);
        Ok(Self {
            loss,
            grad,
            hessian,
            lambda_max,
            grad_bound: norm(jac.row(label)),
            label,
        })
    }

    /// `|<g, delta> + delta^T H delta / 2|`.
    pub fn surrogate(&self, delta: &[f64]) -> f64 {
        (dot(&self.grad, delta) + 0.5 * self.hessian.quad_form(delta)).abs()
    }

    /// `|delta| * grad_bound + lambda_max |delta|^2 / 2`.
    pub fn bound(&self, delta: &[f64]) -> f64 {
        let n = norm(delta);
        n * self.grad_bound + 0.5 * self.lambda_max * n * n
    }

    /// `|L(x + delta) - L(x)|` by direct evaluation.
    pub fn loss_change(&self, model: &Model, x: &Tensor, delta: &[f64]) -> Result<f64> {
        let moved = x.add(&Tensor::new(x.shape().to_vec(), delta.to_vec())?)?;
        Ok((loss_at(model, &moved, self.label)? - self.loss).abs())
    }

    /// `|L(x + delta) - L(x) - <g, delta> - delta^T H delta / 2|`.
    pub fn remainder(&self, model: &Model, x: &Tensor, delta: &[f64]) -> Result<f64> {
        let moved = x.add(&Tensor::new(x.shape().to_vec(), delta.to_vec())?)?;
        let change = loss_at(model, &moved, self.label)? - self.loss;
        Ok((change - dot(&self.grad, delta) - 0.5 * self.hessian.quad_form(delta)).abs())
    }

    pub fn check(&self, model: &Model, x: &Tensor, delta: &[f64]) -> Result<SurrogateCheck> {
        Ok(SurrogateCheck {
            surrogate_lhs: self.surrogate(delta),
            bound_rhs: self.bound(delta),
            fd_lhs: self.loss_change(model, x, delta)?,
        })
    }
}

pub fn surrogate_check(model: &Model, x: &Tensor, label: usize, delta: &[f64]) -> Result<SurrogateCheck> {
    if delta.len() != x.len() {
        return Err(Error::DimensionMismatch {
            op: "surrogate_check",
            left: x.shape().to_vec(),
            right: vec![delta.len()],
        });
    }
    LocalQuadratic::new(model, x, label)?.check(model, x, delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureRow {
    pub trace: f64,
    pub lambda_max: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q90: f64,
}

impl Summary {
    /// Mean plus nearest-rank median and 90th percentile.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| {
            let r = libm::ceil(q * s.len() as f64) as usize;
            s[r.clamp(1, s.len()) - 1]
        };
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: rank(0.5),
            q90: rank(0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub rows: Vec<CurvatureRow>,
    pub trace: Summary,
    pub lambda_max: Summary,
    pub grad_norm: Summary,
}

/// Per-input `Tr(H)`, `lambda_max(H)` and `|grad_x L|` for a batch `[B, C, H, W]`.
pub fn curvature_report(model: &Model, inputs: &Tensor, labels: &[usize]) -> Result<CurvatureReport> {
    if inputs.batch() != labels.len() {
        return Err(Error::DimensionMismatch {
            op: "curvature_report",
            left: inputs.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let mut shape = inputs.shape().to_vec();
    shape[0] = 1;
    let mut rows = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let x = Tensor::new(shape.clone(), inputs.row(i).to_vec())?;
        let h = hessian_ce(model, &x, y)?;
        let (_, g) = input_gradient(model, &x, y)?;
        rows.push(CurvatureRow {
            trace: h.trace(),
            lambda_max: power_iteration(&h, POWER_ITERS, POWER_TOL),
            grad_norm: norm(&g),
        });
    }
    let col = |f: fn(&CurvatureRow) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
    Ok(CurvatureReport {
        trace: col(|r| r.trace),
        lambda_max: col(|r| r.lambda_max),
        grad_norm: col(|r| r.grad_norm),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    fn logistic() -> (Model, [f64; 3]) {
        let mut m = Model::init(ModelSpec::mlp([1, 1, 3], 2, &[]), 0).unwrap();
        let w = [0.7, -1.2, 0.4];
        // Class-1 logit minus class-0 logit is w.x.
        let wt = Tensor::new(vec![3, 2], vec![0.0, w[0], 0.0, w[1], 0.0, w[2]]).unwrap();
        m.set_params(vec![wt, Tensor::zeros(&[2])]).unwrap();
        (m, w)
    }

    fn point() -> Tensor {
        Tensor::new(vec![1, 1, 1, 3], vec![0.3, 0.1, 0.8]).unwrap()
    }

    #[test]
    fn logistic_closed_forms() {
        let (m, w) = logistic();
        let x = point();
        let z: f64 = w.iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let p1 = 1.0 / (1.0 + (-z).exp());
        let jac = logprob_jacobian(&m, &x).unwrap();
        for i in 0..3 {
            assert!((jac.row(1)[i] - jac.row(0)[i] - w[i]).abs() < 1e-14);
            assert!((jac.row(1)[i] - (1.0 - p1) * w[i]).abs() < 1e-14);
        }
        let g = fim(&m, &x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.get(i, j) - p1 * (1.0 - p1) * w[i] * w[j]).abs() < 1e-14);
            }
        }
        let h = hessian_ce(&m, &x, 0).unwrap();
        assert!(h.max_abs_diff(&g).unwrap() < 1e-14);
    }

    #[test]
    fn zero_model_is_flat() {
        let mut m = Model::init(ModelSpec::mlp([1, 2, 2], 4, &[5]), 1).unwrap();
        let zeros: Vec<Tensor> = m.params().tensors().map(|t| Tensor::zeros(t.shape())).collect();
        m.set_params(zeros).unwrap();
        let x = Tensor::full(&[1, 1, 2, 2], 0.4);
        assert!(logprob_jacobian(&m, &x).unwrap().row(2).iter().all(|&v| v == 0.0));
        assert_eq!(fim(&m, &x).unwrap().frobenius(), 0.0);
        assert_eq!(hessian_ce(&m, &x, 1).unwrap().frobenius(), 0.0);
        let c = gradnorm_identity_check(&m, &x, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        let r = curvature_report(&m, &x, &[0]).unwrap();
        assert_eq!((r.trace.mean, r.lambda_max.mean, r.grad_norm.mean), (0.0, 0.0, 0.0));
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let m = Model::init(ModelSpec::mlp([1, 4, 4], 2, &[]), 0).unwrap();
        let x = Tensor::full(&[1, 1, 4, 4], 0.5);
        assert!(matches!(
            logprob_jacobian_capped(&m, &x, 8),
            Err(Error::DimensionCap { dim: 16, cap: 8 })
        ));
    }

    #[test]
    fn power_iteration_examples() {
        assert!((power_iteration(&SquareMatrix::identity(7), 200, 1e-10) - 1.0).abs() < 1e-15);
        let d = SquareMatrix::from_diag(&[1.0, 2.0, 3.0]);
        assert!((power_iteration(&d, 200, 1e-14) - 3.0).abs() < 1e-8);
    }

    #[test]
    fn hutchinson_is_exact_on_diagonals() {
        let d = SquareMatrix::from_diag(&[1.5, -2.0, 4.0, 0.25]);
        let mut r = Rng::new(3);
        let t = hutchinson_trace(4, |v| d.matvec(v), 1, &mut r).unwrap();
        assert_eq!(t.mean, d.trace());
        let t = hutchinson_trace(5, |v| v.to_vec(), 3, &mut r).unwrap();
        assert_eq!((t.mean, t.std_err), (5.0, 0.0));
    }

    #[test]
    fn uniform_moment_constant() {
        assert!((uniform_half_second_moment(0.2) - 0.2 * 0.2 / 6.0).abs() < 1e-18);
    }

    #[test]
    fn zero_sigma_expectations_vanish() {
        let (m, _) = logistic();
        let x = point();
        let g = kl_gauss_expectation(&m, &x, 0.0, 10, &mut Rng::new(0)).unwrap();
        assert_eq!((g.mc_estimate, g.analytic), (0.0, 0.0));
        let u = kl_diverse_expectation(&m, &x, 0.0, 10, &mut Rng::new(0)).unwrap();
        assert_eq!((u.mc_estimate, u.analytic), (0.0, 0.0));
    }

    #[test]
    fn one_hot_parsing() {
        assert_eq!(one_hot_index(&[0.0, 1.0, 0.0]).unwrap(), 1);
        assert!(one_hot_index(&[0.5, 0.5]).is_err());
        assert!(one_hot_index(&[1.0, 1.0]).is_err());
        assert!(one_hot_index(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_delta_surrogate_terms_vanish() {
        let (m, _) = logistic();
        let t = surrogate_check(&m, &point(), 1, &[0.0; 3]).unwrap();
        assert_eq!((t.surrogate_lhs, t.bound_rhs, t.fd_lhs), (0.0, 0.0, 0.0));
    }
}
