//! Training objectives, attacks, the optimizer and the epoch loop.
//!
//! Objectives are built on a caller-supplied [`Tape`] (`*_objective`) so
//! gradients can be taken with respect to parameters, inputs, or both; the
//! `*_loss` wrappers evaluate one mini-batch and return parameter gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{kl_rows, Tape, Var};
use crate::datasets::Dataset;
use crate::error::{config_err, Error, Result};
use crate::models::{argmax_rows, Model, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5A0F;
const BATCH_STREAM: u64 = 0xBA7C;
const VAL_STREAM: u64 = 0x7A11;
const TRADES_INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Standard,
    Dign,
    /// Diverse Gaussian noise augmentation without the consistency term.
    DignWoCr,
    Rse,
    At,
    Trades,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Standard,
        Method::Dign,
        Method::DignWoCr,
        Method::Rse,
        Method::At,
        Method::Trades,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Dign => "dign",
            Method::DignWoCr => "dign_wocr",
            Method::Rse => "rse",
            Method::At => "at",
            Method::Trades => "trades",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub norm: Norm,
}

impl Default for AttackConfig {
    /// l-inf, eps = 8/255, 7 steps of 2.5 eps / 7.
    fn default() -> Self {
        let epsilon = 8.0 / 255.0;
        Self {
            epsilon,
            steps: 7,
            step_size: 2.5 * epsilon / 7.0,
            norm: Norm::Linf,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(config_err("attack epsilon must be finite and >= 0"));
        }
        if self.steps > 0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(config_err("attack step size must be > 0 when steps > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub sigma_max: f64,
    pub n_samples: usize,
    pub rse_sigma: f64,
    pub rse_ensemble_n: usize,
    pub attack: AttackConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Standard,
            epochs: 60,
            batch_size: 64,
            lr_init: 0.1,
            lr_decay_factor: 0.1,
            lr_decay_every: 25,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 0.2,
            sigma_max: 0.2,
            n_samples: 3,
            rse_sigma: 0.1,
            rse_ensemble_n: 10,
            attack: AttackConfig::default(),
            seed: 0,
        }
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl TrainConfig {
    /// Range-checks every field, including ones the method ignores.
    pub fn validate(&self) -> Result<()> {
        nonneg("lambda", self.lambda)?;
        nonneg("sigma_max", self.sigma_max)?;
        nonneg("rse_sigma", self.rse_sigma)?;
        nonneg("weight_decay", self.weight_decay)?;
        nonneg("momentum", self.momentum)?;
        nonneg("lr_decay_factor", self.lr_decay_factor)?;
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(config_err("lr_init must be > 0"));
        }
        if self.momentum >= 1.0 {
            return Err(config_err("momentum must be < 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be >= 1"));
        }
        if self.n_samples == 0 || self.rse_ensemble_n == 0 {
            return Err(config_err("n_samples and rse_ensemble_n must be >= 1"));
        }
        if self.lr_decay_every == 0 {
            return Err(config_err("lr_decay_every must be >= 1"));
        }
        self.attack.validate()
    }

    /// Step-decay learning rate for a zero-based epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let drops = (epoch / self.lr_decay_every) as i32;
        self.lr_init * libm::pow(self.lr_decay_factor, drops as f64)
    }

    pub fn inference(&self) -> Inference {
        match self.method {
            Method::Rse => Inference::Ensemble {
                sigma: self.rse_sigma,
                n: self.rse_ensemble_n,
            },
            _ => Inference::Plain,
        }
    }
}

/// How a trained model turns inputs into class probabilities at test time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inference {
    Plain,
    /// Average of softmax outputs over `n` Gaussian-perturbed copies.
    Ensemble { sigma: f64, n: usize },
}

impl Inference {
    pub fn probs(&self, model: &Model, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        match *self {
            Inference::Plain => model.probs(x),
            Inference::Ensemble { sigma, n } => ensemble_probs(model, x, sigma, n, rng),
        }
    }
}

/// Objective value with parameter gradients in [`Model::bind`] order.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

/// Mean negative log-likelihood of the labelled classes.
pub fn cross_entropy(log_probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let lp = tape.constant(log_probs.clone());
    let ce = tape.cross_entropy(lp, labels)?;
    Ok(tape.value(ce).data()[0])
}

/// Batch-mean `KL(p || q)` from log-probabilities.
pub fn kl_div(log_p: &Tensor, log_q: &Tensor) -> Result<f64> {
    log_p.check_same_shape(log_q, "kl_div")?;
    if log_p.shape().len() != 2 {
        return Err(Error::DimensionMismatch {
            op: "kl_div",
            left: log_p.shape().to_vec(),
            right: log_q.shape().to_vec(),
        });
    }
    Ok(kl_rows(log_p.data(), log_q.data(), log_p.shape()[1]))
}

/// Per-example `sigma_i ~ U(0, sigma_max)` and `delta_i ~ N(0, sigma_i^2 I)`.
pub fn sample_noise(shape: &[usize], sigma_max: f64, rng: &mut Rng) -> (Vec<f64>, Tensor) {
    let batch = shape[0];
    let per: usize = shape[1..].iter().product();
    let mut sigmas = Vec::with_capacity(batch);
    let mut data = Vec::with_capacity(batch * per);
    for _ in 0..batch {
        let s = sigma_max * rng.uniform();
        sigmas.push(s);
        data.extend((0..per).map(|_| s * rng.normal()));
    }
    (sigmas, Tensor::new(shape.to_vec(), data).expect("shape is non-empty"))
}

/// Fixed-scale Gaussian noise `N(0, sigma^2 I)`.
pub fn gaussian_noise(shape: &[usize], sigma: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| sigma * rng.normal()).collect())
        .expect("shape is non-empty")
}

/// Independent per-sample noise streams, so sample `k` sees the same draws
/// whatever the total sample count.
fn sample_streams(rng: &mut Rng, n: usize) -> Vec<Rng> {
    let base = rng.next_u64();
    (0..n).map(|k| Rng::stream(base, &[k as u64])).collect()
}

/// `CE(x, y) + lambda / n * sum_k KL(p(x) || p(x + delta_k))`, gradient through both KL arguments.
#[allow(clippy::too_many_arguments)]
pub fn dign_objective(
    tape: &mut Tape,
    model: &Model,
    params: &[Var],
    x: Var,
    labels: &[usize],
    lambda: f64,
    sigma_max: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<Var> {
    if n == 0 {
        return Err(config_err("n_samples must be >= 1"));
    }
    let clean = model.forward_log_probs(tape, params, x)?;
    let ce = tape.cross_entropy(clean, labels)?;
    let shape = tape.value(x).shape().to_vec();
    let mut reg: Option<Var> = None;
    for mut stream in sample_streams(rng, n) {
        let (_, delta) = sample_noise(&shape, sigma_max, &mut stream);
        let d = tape.constant(delta);
        let noisy_x = tape.add(x, d)?;
        let noisy = model.forward_log_probs(tape, params, noisy_x)?;
        let kl = tape.kl_div(clean, noisy)?;
        reg = Some(match reg {
            None => kl,
            Some(acc) => tape.add(acc, kl)?,
        });
    }
    let reg = tape.scale(reg.expect("n >= 1"), lambda / n as f64);
    tape.add(ce, reg)
}

/// `1/n * sum_k CE(x + delta_k, y)` with diverse noise scales.
pub fn gn_objective(
    tape: &mut Tape,
    model: &Model,
    params: &[Var],
    x: Var,
    labels: &[usize],
    sigma_max: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<Var> {
    if n == 0 {
        return Err(config_err("n_samples must be >= 1"));
    }
    let shape = tape.value(x).shape().to_vec();
    let mut total: Option<Var> = None;
    for mut stream in sample_streams(rng, n) {
        let (_, delta) = sample_noise(&shape, sigma_max, &mut stream);
        let d = tape.constant(delta);
        let noisy_x = tape.add(x, d)?;
        let lp = model.forward_log_probs(tape, params, noisy_x)?;
        let ce = tape.cross_entropy(lp, labels)?;
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    Ok(tape.scale(total.expect("n >= 1"), 1.0 / n as f64))
}

fn eval_params(model: &Model, build: impl FnOnce(&mut Tape, &[Var]) -> Result<Var>) -> Result<LossEval> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let root = build(&mut tape, &params)?;
    let grads = tape.backward(root)?;
    Ok(LossEval {
        value: tape.value(root).data()[0],
        grads: params.iter().map(|&p| grads.wrt(p)).collect(),
    })
}

pub fn standard_loss(model: &Model, x: &Tensor, labels: &[usize]) -> Result<LossEval> {
    eval_params(model, |tape, params| {
        let xv = tape.constant(x.clone());
        let lp = model.forward_log_probs(tape, params, xv)?;
        tape.cross_entropy(lp, labels)
    })
}

pub fn dign_loss(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    lambda: f64,
    sigma_max: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<LossEval> {
    eval_params(model, |tape, params| {
        let xv = tape.constant(x.clone());
        dign_objective(tape, model, params, xv, labels, lambda, sigma_max, n, rng)
    })
}

pub fn gn_loss(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    sigma_max: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<LossEval> {
    eval_params(model, |tape, params| {
        let xv = tape.constant(x.clone());
        gn_objective(tape, model, params, xv, labels, sigma_max, n, rng)
    })
}

/// Ascent step followed by projection onto the `epsilon`-ball, per example.
fn ascend_and_project(delta: &mut Tensor, grad: &Tensor, cfg: &AttackConfig) {
    let per = delta.row_len();
    let d = delta.data_mut();
    match cfg.norm {
        Norm::Linf => {
            for (v, &g) in d.iter_mut().zip(grad.data()) {
                let step = if g > 0.0 {
                    cfg.step_size
                } else if g < 0.0 {
                    -cfg.step_size
                } else {
                    0.0
                };
                *v = (*v + step).clamp(-cfg.epsilon, cfg.epsilon);
            }
        }
        Norm::L2 => {
            for (drow, grow) in d.chunks_mut(per).zip(grad.data().chunks(per)) {
                let gn = libm::sqrt(grow.iter().map(|g| g * g).sum::<f64>());
                if gn > 0.0 {
                    for (v, &g) in drow.iter_mut().zip(grow) {
                        *v += cfg.step_size * g / gn;
                    }
                }
                project_l2(drow, cfg.epsilon);
            }
        }
    }
}

fn project_l2(row: &mut [f64], epsilon: f64) {
    let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
    if n > epsilon {
        let s = if n > 0.0 { epsilon / n } else { 0.0 };
        row.iter_mut().for_each(|v| *v *= s);
    }
}

fn project(delta: &mut Tensor, cfg: &AttackConfig) {
    let per = delta.row_len();
    match cfg.norm {
        Norm::Linf => delta
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.clamp(-cfg.epsilon, cfg.epsilon)),
        Norm::L2 => delta
            .data_mut()
            .chunks_mut(per)
            .for_each(|row| project_l2(row, cfg.epsilon)),
    }
}

/// Input gradient of `objective(x + delta)` with frozen parameters.
fn delta_gradient(
    model: &Model,
    x: &Tensor,
    delta: &Tensor,
    objective: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let dv = tape.leaf(delta.clone());
    let xd = tape.add(xv, dv)?;
    let lp = model.forward_log_probs(&mut tape, &params, xd)?;
    let root = objective(&mut tape, lp)?;
    let g = tape.backward(root)?.wrt(dv);
    Ok((tape.value(root).data()[0], g))
}

/// Projected gradient ascent on cross-entropy from `delta = 0`.
pub fn pgd(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mut delta = Tensor::zeros(x.shape());
    for _ in 0..cfg.steps {
        let (_, g) = delta_gradient(model, x, &delta, |tape, lp| tape.cross_entropy(lp, labels))?;
        ascend_and_project(&mut delta, &g, cfg);
    }
    Ok(delta)
}

pub fn at_loss(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<LossEval> {
    let delta = pgd(model, x, labels, cfg)?;
    let adv = x.add(&delta)?;
    standard_loss(model, &adv, labels)
}

/// Result of the KL inner maximization.
#[derive(Debug, Clone)]
pub struct TradesAttack {
    pub delta: Tensor,
    /// `KL(p(x) || p(x + delta))` at the start point and after every step.
    pub trace: Vec<f64>,
}

/// PGD ascent on `KL(p(x) || p(x + delta))` with the clean distribution held fixed.
///
/// The KL gradient vanishes at `delta = 0`, so the start point is a small
/// Gaussian draw (scale 1e-3) projected onto the ball.
pub fn trades_attack(model: &Model, x: &Tensor, cfg: &AttackConfig, rng: &mut Rng) -> Result<TradesAttack> {
    cfg.validate()?;
    let clean = model.log_probs(x)?;
    let mut delta = gaussian_noise(x.shape(), TRADES_INIT_SCALE, rng);
    project(&mut delta, cfg);
    let kl_at = |delta: &Tensor| {
        delta_gradient(model, x, delta, |tape, lp| {
            let c = tape.constant(clean.clone());
            tape.kl_div(c, lp)
        })
    };
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (v, g) = kl_at(&delta)?;
        trace.push(v);
        ascend_and_project(&mut delta, &g, cfg);
    }
    trace.push(kl_at(&delta)?.0);
    Ok(TradesAttack { delta, trace })
}

/// `CE(x, y) + lambda * KL(p(x) || p(x + delta*))` at the inner maximizer.
pub fn trades_objective(
    tape: &mut Tape,
    model: &Model,
    params: &[Var],
    x: Var,
    delta: &Tensor,
    labels: &[usize],
    lambda: f64,
) -> Result<Var> {
    let clean = model.forward_log_probs(tape, params, x)?;
    let ce = tape.cross_entropy(clean, labels)?;
    let d = tape.constant(delta.clone());
    let xd = tape.add(x, d)?;
    let adv = model.forward_log_probs(tape, params, xd)?;
    let kl = tape.kl_div(clean, adv)?;
    let reg = tape.scale(kl, lambda);
    tape.add(ce, reg)
}

pub fn trades_loss(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    lambda: f64,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<LossEval> {
    let attack = trades_attack(model, x, cfg, rng)?;
    eval_params(model, |tape, params| {
        let xv = tape.constant(x.clone());
        trades_objective(tape, model, params, xv, &attack.delta, labels, lambda)
    })
}

/// Cross-entropy at a single fixed-scale Gaussian perturbation of the input.
pub fn rse_loss(model: &Model, x: &Tensor, labels: &[usize], sigma: f64, rng: &mut Rng) -> Result<LossEval> {
    let noisy = x.add(&gaussian_noise(x.shape(), sigma, rng))?;
    standard_loss(model, &noisy, labels)
}

fn ensemble_probs(model: &Model, x: &Tensor, sigma: f64, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if n == 0 {
        return Err(config_err("ensemble size must be >= 1"));
    }
    let mut acc = Tensor::zeros(&[x.batch(), model.num_classes()]);
    for _ in 0..n {
        let noisy = x.add(&gaussian_noise(x.shape(), sigma, rng))?;
        let p = model.probs(&noisy)?;
        acc = acc.add(&p)?;
    }
    Ok(acc.map(|v| v / n as f64))
}

/// Argmax of the averaged softmax over `n` noisy copies; ties go to the lowest index.
pub fn rse_predict(model: &Model, x: &Tensor, sigma: f64, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let p = ensemble_probs(model, x, sigma, n, rng)?;
    Ok(argmax_rows(p.data(), model.num_classes()))
}

/// Velocity buffers for Nesterov SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// Nesterov step with L2 decay folded into the gradient:
/// `g += wd * theta; v = mu * v - lr * g; theta += mu * v - lr * g`.
pub fn sgd_update(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::DimensionMismatch {
            op: "sgd_update",
            left: vec![params.len()],
            right: vec![grads.len(), state.velocity.len()],
        });
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        p.check_same_shape(g, "sgd_update")?;
        p.check_same_shape(v, "sgd_update")?;
        for ((theta, &grad), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g = grad + weight_decay * *theta;
            *vel = momentum * *vel - lr * g;
            *theta += momentum * *vel - lr * g;
        }
    }
    Ok(())
}

/// One mini-batch of the configured method.
pub fn batch_loss(config: &TrainConfig, model: &Model, x: &Tensor, labels: &[usize], rng: &mut Rng) -> Result<LossEval> {
    match config.method {
        Method::Standard => standard_loss(model, x, labels),
        Method::Dign => dign_loss(
            model,
            x,
            labels,
            config.lambda,
            config.sigma_max,
            config.n_samples,
            rng,
        ),
        Method::DignWoCr => gn_loss(model, x, labels, config.sigma_max, config.n_samples, rng),
        Method::Rse => rse_loss(model, x, labels, config.rse_sigma, rng),
        Method::At => at_loss(model, x, labels, &config.attack),
        Method::Trades => trades_loss(model, x, labels, config.lambda, &config.attack, rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// First epoch with the highest validation accuracy; `None` when no epoch ran.
    pub selected_epoch: Option<usize>,
}

fn check_dataset(spec: &ModelSpec, data: &Dataset, what: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(what));
    }
    if data.image_shape() != spec.input_shape {
        return Err(Error::DimensionMismatch {
            op: what,
            left: data.image_shape().to_vec(),
            right: spec.input_shape.to_vec(),
        });
    }
    if data.num_classes != spec.num_classes {
        return Err(config_err(format!(
            "{what} has {} classes, model expects {}",
            data.num_classes, spec.num_classes
        )));
    }
    Ok(())
}

/// Accuracy of `model` on `data` under an inference mode.
pub fn inference_accuracy(model: &Model, data: &Dataset, inference: Inference, rng: &mut Rng) -> Result<f64> {
    let p = inference.probs(model, &data.images, rng)?;
    let pred = argmax_rows(p.data(), model.num_classes());
    crate::metrics::accuracy(&pred, &data.labels)
}

/// Seeded mini-batch training; returns the parameters of the best validation epoch.
pub fn train(config: &TrainConfig, spec: ModelSpec, train_set: &Dataset, val_set: &Dataset) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    check_dataset(&spec, train_set, "train set")?;
    check_dataset(&spec, val_set, "validation set")?;
    let mut model = Model::init(spec, config.seed)?;
    let mut theta: Vec<Tensor> = model.params().tensors().cloned().collect();
    let mut state = SgdState::new(&theta);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let n = train_set.len();
    let inference = config.inference();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        let order = Rng::stream(config.seed, &[SHUFFLE_STREAM, epoch as u64]).permutation(n);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.images.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let mut rng = Rng::stream(config.seed, &[BATCH_STREAM, epoch as u64, b as u64]);
            let eval = batch_loss(config, &model, &x, &y, &mut rng)?;
            loss_sum += eval.value * idx.len() as f64;
            sgd_update(
                &mut theta,
                &eval.grads,
                &mut state,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
            model.set_params(theta.clone())?;
        }
        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() {
            return Err(Error::Generation(format!("training diverged at epoch {epoch}")));
        }
        let mut val_rng = Rng::stream(config.seed, &[VAL_STREAM, epoch as u64]);
        let val_accuracy = inference_accuracy(&model, val_set, inference, &mut val_rng)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
            learning_rate: lr,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, theta.clone()));
            history.selected_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        model.set_params(params)?;
    }
    Ok((model, history))
}
