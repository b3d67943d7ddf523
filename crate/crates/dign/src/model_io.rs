//! Line-oriented text container for a model spec and its parameters.
//!
//! ```text
//! dign-model 1
//! input_shape 1 16 16
//! num_classes 4
//! init_seed 0
//! layers 6
//! flatten
//! affine 64
//! relu
//! conv 8 3 3 same
//! global_avg_pool
//! params 2
//! layer1.weight 256 64
//! <256*64 space-separated values>
//! ```
//!
//! Values use the shortest decimal form that parses back to the same `f64`,
//! so a write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dign_core::models::{Layer, Model, ModelSpec, Param, ParamSet};
use dign_core::{Padding, Tensor};

use crate::error::{CliError, Result};

const HEADER: &str = "dign-model 1";

fn layer_line(layer: &Layer) -> String {
    match *layer {
        Layer::Affine { out } => format!("affine {out}"),
        Layer::Relu => "relu".into(),
        Layer::Conv {
            filters,
            kh,
            kw,
            padding,
        } => {
            let p = match padding {
                Padding::Same => "same",
                Padding::Valid => "valid",
            };
            format!("conv {filters} {kh} {kw} {p}")
        }
        Layer::GlobalAvgPool => "global_avg_pool".into(),
        Layer::Flatten => "flatten".into(),
    }
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for (i, v) in items.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("writing to a String");
    }
    s
}

pub fn to_text(model: &Model) -> String {
    let spec = model.spec();
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let _ = writeln!(out, "input_shape {}", join(spec.input_shape));
    let _ = writeln!(out, "num_classes {}", spec.num_classes);
    let _ = writeln!(out, "init_seed {}", model.params().init_seed);
    let _ = writeln!(out, "layers {}", spec.layers.len());
    for l in &spec.layers {
        out.push_str(&layer_line(l));
        out.push('\n');
    }
    let _ = writeln!(out, "params {}", model.params().len());
    for p in &model.params().params {
        let _ = writeln!(out, "{} {}", p.name, join(p.value.shape()));
        out.push_str(&join(p.value.data()));
        out.push('\n');
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

type Fail = (usize, String);

impl<'a> Lines<'a> {
    fn next(&mut self) -> std::result::Result<&'a str, Fail> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err((self.line + 1, "unexpected end of file".into())),
        }
    }

    fn fail<T>(&self, msg: impl Into<String>) -> std::result::Result<T, Fail> {
        Err((self.line, msg.into()))
    }

    fn keyed(&mut self, key: &str) -> std::result::Result<Vec<&'a str>, Fail> {
        let l = self.next()?;
        let mut it = l.split_ascii_whitespace();
        if it.next() != Some(key) {
            return self.fail(format!("expected `{key}`"));
        }
        Ok(it.collect())
    }

    fn numbers<T: std::str::FromStr>(&self, words: &[&str]) -> std::result::Result<Vec<T>, Fail> {
        words
            .iter()
            .map(|w| w.parse().map_err(|_| (self.line, format!("bad number {w:?}"))))
            .collect()
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> std::result::Result<T, Fail> {
        let w = self.keyed(key)?;
        if w.len() != 1 {
            return self.fail(format!("`{key}` takes one value"));
        }
        Ok(self.numbers(&w)?.remove(0))
    }
}

fn parse_layer(lines: &mut Lines) -> std::result::Result<Layer, Fail> {
    let l = lines.next()?;
    let w: Vec<&str> = l.split_ascii_whitespace().collect();
    Ok(match w.as_slice() {
        ["affine", n] => Layer::Affine {
            out: lines.numbers(&[n])?[0],
        },
        ["relu"] => Layer::Relu,
        ["flatten"] => Layer::Flatten,
        ["global_avg_pool"] => Layer::GlobalAvgPool,
        ["conv", f, kh, kw, p] => {
            let n: Vec<usize> = lines.numbers(&[f, kh, kw])?;
            let padding = match *p {
                "same" => Padding::Same,
                "valid" => Padding::Valid,
                other => return lines.fail(format!("unknown padding {other:?}")),
            };
            Layer::Conv {
                filters: n[0],
                kh: n[1],
                kw: n[2],
                padding,
            }
        }
        _ => return lines.fail(format!("unknown layer {l:?}")),
    })
}

fn parse(text: &str) -> std::result::Result<(ModelSpec, ParamSet), Fail> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != HEADER {
        return lines.fail(format!("expected `{HEADER}`"));
    }
    let shape_words = lines.keyed("input_shape")?;
    let shape: Vec<usize> = lines.numbers(&shape_words)?;
    if shape.len() != 3 {
        return lines.fail("input_shape takes three extents");
    }
    let num_classes = lines.single("num_classes")?;
    let init_seed = lines.single("init_seed")?;
    let n_layers: usize = lines.single("layers")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(parse_layer(&mut lines)?);
    }
    let n_params: usize = lines.single("params")?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let head: Vec<&str> = lines.next()?.split_ascii_whitespace().collect();
        let Some((name, dims)) = head.split_first() else {
            return lines.fail("expected a parameter header");
        };
        let dims: Vec<usize> = lines.numbers(dims)?;
        let words: Vec<&str> = lines.next()?.split_ascii_whitespace().collect();
        let values: Vec<f64> = lines.numbers(&words)?;
        let value = Tensor::new(dims, values).map_err(|e| (lines.line, e.to_string()))?;
        params.push(Param {
            name: (*name).to_string(),
            value,
        });
    }
    if lines.inner.any(|(_, l)| !l.trim().is_empty()) {
        return lines.fail("trailing content after the last parameter");
    }
    let spec = ModelSpec {
        input_shape: [shape[0], shape[1], shape[2]],
        num_classes,
        layers,
    };
    Ok((spec, ParamSet { params, init_seed }))
}

pub fn from_text(text: &str, path: &Path) -> Result<Model> {
    let (spec, params) = parse(text).map_err(|(line, message)| CliError::ModelFormat {
        path: path.to_path_buf(),
        line,
        message,
    })?;
    Ok(Model::from_parts(spec, params)?)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    from_text(&text, path)
}
