//! Random (model, input, label) triples for the curvature checks, shared with the acceptance suite.

use dign_core::landscape::{hessian_ce, input_gradient, SquareMatrix};
use dign_core::models::{Model, ModelSpec};
use dign_core::{Rng, Tensor};

/// Model with random biases, so no unit sits exactly on a relu switch.
pub fn random_model(spec: ModelSpec, seed: u64, weight_scale: f64) -> Model {
    let mut m = Model::init(spec, seed).unwrap();
    let mut rng = Rng::stream(seed, &[0xB1A5]);
    let params = m
        .params()
        .tensors()
        .map(|t| {
            let mut t = t.clone();
            let bias = t.shape().len() == 1;
            t.data_mut().iter_mut().for_each(|v| {
                *v = if bias { 0.1 * rng.normal() } else { *v * weight_scale }
            });
            t
        })
        .collect();
    m.set_params(params).unwrap();
    m
}

pub fn random_input(shape: [usize; 3], rng: &mut Rng) -> Tensor {
    let d = shape.iter().product();
    Tensor::new(vec![1, shape[0], shape[1], shape[2]], (0..d).map(|_| rng.uniform()).collect()).unwrap()
}

/// Twenty (model, input) pairs with `d <= 64`, alternating MLPs and TinyCNNs.
pub fn pairs(count: u64, shapes: &[[usize; 3]]) -> Vec<(Model, Tensor, usize)> {
    (0..count)
        .map(|seed| {
            let mut rng = Rng::stream(seed, &[0x9A1]);
            let shape = shapes[seed as usize % shapes.len()];
            let k = 2 + rng.below(4);
            let spec = if seed % 2 == 0 {
                ModelSpec::mlp_64_32(shape, k)
            } else {
                ModelSpec::tiny_cnn(shape, k)
            };
            let m = random_model(spec, seed, 1.0 + 2.0 * rng.uniform());
            let x = random_input(shape, &mut rng);
            let y = rng.below(k);
            (m, x, y)
        })
        .collect()
}

/// Relative Frobenius error of `hessian_ce` against central differences of the input gradient.
pub fn fd_hessian_error(m: &Model, x: &Tensor, y: usize, h: f64) -> f64 {
    let d = x.len();
    let mut fd = vec![0.0; d * d];
    for i in 0..d {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut q = x.clone();
        q.data_mut()[i] -= h;
        let (_, gp) = input_gradient(m, &p, y).unwrap();
        let (_, gq) = input_gradient(m, &q, y).unwrap();
        for j in 0..d {
            fd[i * d + j] = (gp[j] - gq[j]) / (2.0 * h);
        }
    }
    let fd = SquareMatrix::new(d, fd).unwrap();
    let exact = hessian_ce(m, x, y).unwrap();
    let diff: f64 = exact
        .data()
        .iter()
        .zip(fd.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / exact.frobenius().max(1e-300)
}
