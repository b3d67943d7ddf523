//! Finite-difference checks of every composite training loss, shared with the acceptance suite.

use dign_core::autodiff::max_relative_error;
use dign_core::models::{Model, ModelSpec};
use dign_core::training::{dign_objective, gn_objective, trades_objective};
use dign_core::{Result, Rng, Tape, Tensor, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-6;
pub const CASES: u64 = 100;
/// Step-halving disagreement, relative to the tolerance, that marks a relu switch inside the stencil.
const KINK: f64 = 0.1;

/// Finite-difference rounding noise per unit of `|f|`, times `1/h`.
const NOISE: f64 = 1e-14;

#[derive(Default, Clone)]
struct Outcome {
    analytic: Vec<f64>,
    numeric: Vec<f64>,
    coords: usize,
    kinked: usize,
}

impl Outcome {
    fn merge(mut self, o: Outcome) -> Outcome {
        self.analytic.extend(o.analytic);
        self.numeric.extend(o.numeric);
        self.coords += o.coords;
        self.kinked += o.kinked;
        self
    }

    /// `|a - n| / max(|a|, |n|, s)` with `s` the largest magnitude over the whole gradient.
    fn err(&self) -> f64 {
        max_relative_error(&self.analytic, &self.numeric)
    }
}

fn analytic_grad<F>(f: &F, point: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(point.clone());
    let root = f(&mut tape, leaf)?;
    Ok((tape.value(root).data()[0], tape.backward(root)?.wrt(leaf)))
}

/// Central differences against `backward`, skipping coordinates whose stencil straddles a relu switch.
///
/// `scale` is the magnitude the kink test is judged against, normally the largest
/// entry of the full gradient.
fn grad_check<F>(f: F, point: &Tensor, h: f64, scale: f64) -> Result<Outcome>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let (f0, analytic) = analytic_grad(&f, point)?;
    let eval = |p: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let l = t.leaf(p);
        let r = f(&mut t, l)?;
        Ok(t.value(r).data()[0])
    };
    let central = |i: usize, h: f64| -> Result<f64> {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        Ok((eval(plus)? - eval(minus)?) / (2.0 * h))
    };
    let floor = NOISE * f0.abs().max(1.0) / h;
    let mut out = Outcome {
        coords: point.len(),
        ..Outcome::default()
    };
    for i in 0..point.len() {
        let d = central(i, h)?;
        // Smooth functions agree to O(h^2) here; a switch inside the stencil does not.
        if (d - central(i, h / 2.0)?).abs() > KINK * TOL * scale.max(d.abs()) + floor {
            out.kinked += 1;
            continue;
        }
        out.analytic.push(analytic.data()[i]);
        out.numeric.push(d);
    }
    Ok(out)
}

pub struct Case {
    pub model: Model,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub delta: Tensor,
    pub seed: u64,
}

pub fn case(seed: u64) -> Case {
    let mut rng = Rng::stream(seed, &[0x6C]);
    let k = 2 + rng.below(3);
    let spec = if seed % 4 == 3 {
        ModelSpec::tiny_cnn([1, 4, 4], k)
    } else {
        ModelSpec::mlp([1, 3, 3], k, &[6, 5])
    };
    let mut model = Model::init(spec, seed).unwrap();
    // Zero biases put dead units exactly on the relu kink.
    let jittered = model
        .params()
        .tensors()
        .map(|t| {
            let mut t = t.clone();
            if t.shape().len() == 1 {
                t.data_mut().iter_mut().for_each(|v| *v = 0.2 * rng.normal());
            }
            t
        })
        .collect();
    model.set_params(jittered).unwrap();
    let shape = model.spec().input_shape;
    let b = 1 + rng.below(3);
    let d = shape.iter().product::<usize>();
    let x = Tensor::new(vec![b, shape[0], shape[1], shape[2]], (0..b * d).map(|_| rng.uniform()).collect()).unwrap();
    let labels = (0..b).map(|_| rng.below(k)).collect();
    let delta = Tensor::new(x.shape().to_vec(), (0..b * d).map(|_| 0.3 * rng.normal()).collect()).unwrap();
    Case {
        model,
        x,
        labels,
        delta,
        seed,
    }
}

/// Parameters as constants except slot `j`, which is `leaf`.
fn params_with(tape: &mut Tape, model: &Model, j: usize, leaf: Var) -> Vec<Var> {
    model
        .params()
        .tensors()
        .enumerate()
        .map(|(i, t)| if i == j { leaf } else { tape.constant(t.clone()) })
        .collect()
}

/// All parameter tensors of `c.model`, checked as one gradient.
fn check_params<F>(c: &Case, f: F) -> Outcome
where
    F: Fn(&mut Tape, &[Var], Var) -> Result<Var>,
{
    let f = &f;
    let slot = |j: usize| {
        move |tape: &mut Tape, leaf: Var| {
            let params = params_with(tape, &c.model, j, leaf);
            let x = tape.constant(c.x.clone());
            f(tape, &params, x)
        }
    };
    let tensors: Vec<&Tensor> = c.model.params().tensors().collect();
    let scale = tensors
        .iter()
        .enumerate()
        .map(|(j, p)| analytic_grad(&slot(j), p).unwrap().1.max_abs())
        .fold(0.0, f64::max);
    tensors
        .iter()
        .enumerate()
        .map(|(j, p)| grad_check(slot(j), p, H, scale).unwrap())
        .fold(Outcome::default(), Outcome::merge)
}

fn check_input<F>(c: &Case, f: F) -> Outcome
where
    F: Fn(&mut Tape, &[Var], Var) -> Result<Var>,
{
    let g = |tape: &mut Tape, leaf: Var| {
        let params = c.model.bind_frozen(tape);
        f(tape, &params, leaf)
    };
    let scale = analytic_grad(&g, &c.x).unwrap().1.max_abs();
    grad_check(g, &c.x, H, scale).unwrap()
}

/// Worst error over all cases plus how many coordinates were skipped as kinked.
#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub name: &'static str,
    pub worst: f64,
    pub worst_seed: u64,
    pub coords: usize,
    pub kinked: usize,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.worst <= TOL && self.kinked * 100 <= self.coords
    }
}

fn over_cases(name: &'static str, check: impl Fn(&Case) -> Vec<Outcome>) -> Summary {
    let mut s = Summary {
        name,
        worst: 0.0,
        worst_seed: 0,
        coords: 0,
        kinked: 0,
    };
    for seed in 0..CASES {
        for o in check(&case(seed)) {
            if o.err() > s.worst {
                s.worst = o.err();
                s.worst_seed = seed;
            }
            s.coords += o.coords;
            s.kinked += o.kinked;
        }
    }
    s
}

pub fn cross_entropy() -> Summary {
    let ce = |c: &Case| {
        let f = |tape: &mut Tape, params: &[Var], x: Var| {
            let lp = c.model.forward_log_probs(tape, params, x)?;
            tape.cross_entropy(lp, &c.labels)
        };
        vec![check_params(c, f), check_input(c, f)]
    };
    over_cases("cross_entropy", ce)
}

pub fn kl_div() -> Summary {
    over_cases("kl_div", |c| {
        let f = |tape: &mut Tape, params: &[Var], x: Var| {
            let d = tape.constant(c.delta.clone());
            let xd = tape.add(x, d)?;
            let p = c.model.forward_log_probs(tape, params, x)?;
            let q = c.model.forward_log_probs(tape, params, xd)?;
            tape.kl_div(p, q)
        };
        vec![check_params(c, f), check_input(c, f)]
    })
}

pub fn kl_div_reversed() -> Summary {
    over_cases("kl_div reversed", |c| {
        let f = |tape: &mut Tape, params: &[Var], x: Var| {
            let d = tape.constant(c.delta.clone());
            let xd = tape.add(x, d)?;
            let p = c.model.forward_log_probs(tape, params, xd)?;
            let q = c.model.forward_log_probs(tape, params, x)?;
            tape.kl_div(p, q)
        };
        vec![check_params(c, f)]
    })
}

pub fn dign() -> Summary {
    over_cases("dign", |c| {
        let f = |tape: &mut Tape, params: &[Var], x: Var| {
            let mut rng = Rng::new(c.seed);
            dign_objective(tape, &c.model, params, x, &c.labels, 0.7, 0.1, 3, &mut rng)
        };
        vec![check_params(c, f), check_input(c, f)]
    })
}

pub fn gn() -> Summary {
    over_cases("gn", |c| {
        let f = |tape: &mut Tape, params: &[Var], x: Var| {
            let mut rng = Rng::new(c.seed);
            gn_objective(tape, &c.model, params, x, &c.labels, 0.1, 2, &mut rng)
        };
        vec![check_params(c, f)]
    })
}

pub fn trades_inner() -> Summary {
    over_cases("trades inner", |c| {
        let clean = c.model.log_probs(&c.x).unwrap();
        let f = |tape: &mut Tape, dv: Var| {
            let params = c.model.bind_frozen(tape);
            let x = tape.constant(c.x.clone());
            let xd = tape.add(x, dv)?;
            let lp = c.model.forward_log_probs(tape, &params, xd)?;
            let p = tape.constant(clean.clone());
            tape.kl_div(p, lp)
        };
        let scale = analytic_grad(&f, &c.delta).unwrap().1.max_abs();
        vec![grad_check(f, &c.delta, H, scale).unwrap()]
    })
}

pub fn trades_outer() -> Summary {
    over_cases("trades outer", |c| {
        vec![check_params(c, |tape, params, x| {
            trades_objective(tape, &c.model, params, x, &c.delta, &c.labels, 1.5)
        })]
    })
}

pub fn all() -> Vec<Summary> {
    vec![
        cross_entropy(),
        kl_div(),
        kl_div_reversed(),
        dign(),
        gn(),
        trades_inner(),
        trades_outer(),
    ]
}
