//! Classifier specifications, parameter initialization and forward maps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Affine { out: usize },
    Relu,
    Conv { filters: usize, kh: usize, kw: usize, padding: Padding },
    GlobalAvgPool,
    Flatten,
}

/// Layer stack from an input image shape `[C, H, W]` to `num_classes` logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    /// flatten, affine 64, relu, affine 32, relu, affine K.
    pub fn mlp_64_32(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self::mlp(input_shape, num_classes, &[64, 32])
    }

    pub fn mlp(input_shape: [usize; 3], num_classes: usize, hidden: &[usize]) -> Self {
        let mut layers = vec![Layer::Flatten];
        for &h in hidden {
            layers.push(Layer::Affine { out: h });
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Affine { out: num_classes });
        Self {
            input_shape,
            num_classes,
            layers,
        }
    }

    /// conv 8x3x3 same, relu, conv 8x3x3 same, relu, global average pool, affine K.
    pub fn tiny_cnn(input_shape: [usize; 3], num_classes: usize) -> Self {
        let conv = Layer::Conv {
            filters: 8,
            kh: 3,
            kw: 3,
            padding: Padding::Same,
        };
        Self {
            input_shape,
            num_classes,
            layers: vec![
                conv,
                Layer::Relu,
                conv,
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Affine { out: num_classes },
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Per-layer output shapes (without batch axis); fails on the first
    /// layer whose input does not fit.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec {
                layer: 0,
                reason: format!("need at least 2 classes, got {}", self.num_classes),
            });
        }
        if self.input_shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidSpec {
                layer: 0,
                reason: format!("input shape {:?} has an empty axis", self.input_shape),
            });
        }
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |reason: String| Error::InvalidSpec { layer: i, reason };
            shape = match *layer {
                Layer::Affine { out } => {
                    if shape.len() != 1 {
                        return Err(bad(format!("affine needs flat features, got {shape:?}")));
                    }
                    if out == 0 {
                        return Err(bad("affine width must be positive".into()));
                    }
                    vec![out]
                }
                Layer::Relu => shape,
                Layer::Conv {
                    filters,
                    kh,
                    kw,
                    padding,
                } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("conv needs [C,H,W] input, got {shape:?}")));
                    }
                    if filters == 0 || kh % 2 == 0 || kw % 2 == 0 {
                        return Err(bad(format!(
                            "conv needs filters > 0 and odd kernel, got {filters}x{kh}x{kw}"
                        )));
                    }
                    match padding {
                        Padding::Same => vec![filters, shape[1], shape[2]],
                        Padding::Valid => {
                            if kh > shape[1] || kw > shape[2] {
                                return Err(bad(format!(
                                    "kernel {kh}x{kw} larger than input {}x{}",
                                    shape[1], shape[2]
                                )));
                            }
                            vec![filters, shape[1] - kh + 1, shape[2] - kw + 1]
                        }
                    }
                }
                Layer::GlobalAvgPool => {
                    if shape.len() != 3 {
                        return Err(bad(format!("pooling needs [C,H,W] input, got {shape:?}")));
                    }
                    vec![shape[0]]
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
            out.push(shape.clone());
        }
        if shape != [self.num_classes] {
            return Err(Error::InvalidSpec {
                layer: self.layers.len().saturating_sub(1),
                reason: format!("final output {shape:?} is not [{}]", self.num_classes),
            });
        }
        Ok(out)
    }

    /// `(layer index, weight shape, bias shape, fan_in)` for parametrized layers.
    fn param_layout(&self) -> Result<Vec<(usize, Vec<usize>, usize, usize)>> {
        let shapes = self.layer_shapes()?;
        let mut layout = Vec::new();
        let mut prev = self.input_shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Affine { out } => layout.push((i, vec![prev[0], out], out, prev[0])),
                Layer::Conv { filters, kh, kw, .. } => {
                    layout.push((i, vec![filters, prev[0], kh, kw], filters, prev[0] * kh * kw))
                }
                _ => {}
            }
            prev = shapes[i].clone();
        }
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named parameter tensors, two per parametrized layer (`layer{i}.weight`, `layer{i}.bias`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub params: Vec<Param>,
    pub init_seed: u64,
}

impl ParamSet {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }
}

/// A validated spec together with matching parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamSet,
}

impl Model {
    /// He-style uniform init: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let layout = spec.param_layout()?;
        let mut rng = Rng::stream(seed, &[INIT_STREAM]);
        let mut params = Vec::with_capacity(layout.len() * 2);
        for (i, wshape, bias_len, fan_in) in layout {
            let bound = libm::sqrt(6.0 / fan_in as f64);
            let n: usize = wshape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
            params.push(Param {
                name: format!("layer{i}.weight"),
                value: Tensor::new(wshape, w)?,
            });
            params.push(Param {
                name: format!("layer{i}.bias"),
                value: Tensor::zeros(&[bias_len]),
            });
        }
        Ok(Self {
            spec,
            params: ParamSet {
                params,
                init_seed: seed,
            },
        })
    }

    /// Pairs a spec with externally supplied parameters, checking names and shapes.
    pub fn from_parts(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        let layout = spec.param_layout()?;
        if params.len() != layout.len() * 2 {
            return Err(Error::InvalidSpec {
                layer: 0,
                reason: format!(
                    "expected {} parameter tensors, got {}",
                    layout.len() * 2,
                    params.len()
                ),
            });
        }
        for (j, (i, wshape, bias_len, _)) in layout.into_iter().enumerate() {
            let w = &params.params[2 * j];
            let b = &params.params[2 * j + 1];
            let ok = w.name == format!("layer{i}.weight")
                && b.name == format!("layer{i}.bias")
                && w.value.shape() == wshape.as_slice()
                && b.value.shape() == [bias_len];
            if !ok {
                return Err(Error::InvalidSpec {
                    layer: i,
                    reason: format!(
                        "parameters {}:{:?} / {}:{:?} do not match weight {wshape:?}, bias [{bias_len}]",
                        w.name,
                        w.value.shape(),
                        b.name,
                        b.value.shape()
                    ),
                });
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// Replaces parameter values in order; shapes must match.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.params.iter_mut().zip(values) {
            p.value.check_same_shape(&v, "set_params")?;
            p.value = v;
        }
        Ok(())
    }

    /// Pushes every parameter onto the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Pushes every parameter as a constant (no parameter gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().map(|t| tape.constant(t.clone())).collect()
    }

    /// Records the forward pass of `x[B, C, H, W]` and returns the logits node.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut h = x;
        let mut p = 0;
        for layer in &self.spec.layers {
            h = match *layer {
                Layer::Affine { .. } => {
                    let out = tape.affine(h, params[p], params[p + 1])?;
                    p += 2;
                    out
                }
                Layer::Relu => tape.relu(h),
                Layer::Conv { padding, .. } => {
                    let c = tape.conv2d(h, params[p], padding)?;
                    let out = tape.channel_bias(c, params[p + 1])?;
                    p += 2;
                    out
                }
                Layer::GlobalAvgPool => tape.global_avg_pool(h)?,
                Layer::Flatten => tape.flatten(h),
            };
        }
        Ok(h)
    }

    /// Logits and log-probabilities recorded on `tape`.
    pub fn forward_log_probs(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let z = self.forward(tape, params, x)?;
        tape.log_softmax(z)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let z = self.forward(&mut tape, &params, xv)?;
        Ok(tape.value(z).clone())
    }

    pub fn log_probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let lp = self.forward_log_probs(&mut tape, &params, xv)?;
        Ok(tape.value(lp).clone())
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.log_probs(x)?.map(libm::exp))
    }

    /// Argmax class per example; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok(argmax_rows(z.data(), self.spec.num_classes))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.spec.input_shape {
            let mut expected = vec![s.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.spec.input_shape);
            return Err(Error::DimensionMismatch {
                op: "model input",
                left: s.to_vec(),
                right: expected,
            });
        }
        Ok(())
    }
}

/// Row-wise argmax with lowest-index tie breaking.
pub fn argmax_rows(values: &[f64], k: usize) -> Vec<usize> {
    values
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
