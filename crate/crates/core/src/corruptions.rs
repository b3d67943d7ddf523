//! Seeded digital-noise corruptions at five severities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::datasets::check_pixels;
use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionKind {
    Gaussian,
    Shot,
    Impulse,
    Speckle,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::Gaussian,
        CorruptionKind::Shot,
        CorruptionKind::Impulse,
        CorruptionKind::Speckle,
    ];

    /// Kinds scored by mCA-N: everything except gaussian.
    pub const NOISE: [CorruptionKind; 3] = [CorruptionKind::Shot, CorruptionKind::Impulse, CorruptionKind::Speckle];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Gaussian => "gaussian",
            CorruptionKind::Shot => "shot",
            CorruptionKind::Impulse => "impulse",
            CorruptionKind::Speckle => "speckle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

pub const SEVERITIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// 1 through 5.
    pub severity: usize,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: usize) -> Result<Self> {
        if !(1..=SEVERITIES).contains(&severity) {
            return Err(config_err(format!("severity must be in 1..=5, got {severity}")));
        }
        Ok(Self { kind, severity })
    }

    /// Stream tags for deriving a per-cell rng.
    pub fn tags(&self) -> [u64; 2] {
        [self.kind.tag(), self.severity as u64]
    }
}

/// Per-kind parameters indexed by severity - 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityTables {
    pub gaussian: [f64; SEVERITIES],
    pub shot: [f64; SEVERITIES],
    pub impulse: [f64; SEVERITIES],
    pub speckle: [f64; SEVERITIES],
}

impl Default for SeverityTables {
    fn default() -> Self {
        Self {
            gaussian: [0.04, 0.08, 0.12, 0.18, 0.26],
            shot: [60.0, 25.0, 12.0, 5.0, 3.0],
            impulse: [0.03, 0.06, 0.09, 0.17, 0.27],
            speckle: [0.06, 0.12, 0.20, 0.35, 0.50],
        }
    }
}

impl SeverityTables {
    pub fn get(&self, kind: CorruptionKind) -> &[f64; SEVERITIES] {
        match kind {
            CorruptionKind::Gaussian => &self.gaussian,
            CorruptionKind::Shot => &self.shot,
            CorruptionKind::Impulse => &self.impulse,
            CorruptionKind::Speckle => &self.speckle,
        }
    }

    pub fn get_mut(&mut self, kind: CorruptionKind) -> &mut [f64; SEVERITIES] {
        match kind {
            CorruptionKind::Gaussian => &mut self.gaussian,
            CorruptionKind::Shot => &mut self.shot,
            CorruptionKind::Impulse => &mut self.impulse,
            CorruptionKind::Speckle => &mut self.speckle,
        }
    }

    pub fn parameter(&self, spec: CorruptionSpec) -> f64 {
        self.get(spec.kind)[spec.severity - 1]
    }

    /// Range checks only; overrides need not be monotone.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Option<String> = None;
        for kind in CorruptionKind::ALL {
            for &v in self.get(kind) {
                let ok = match kind {
                    CorruptionKind::Shot => v > 0.0 && v.is_finite(),
                    CorruptionKind::Impulse => (0.0..=1.0).contains(&v),
                    _ => v >= 0.0 && v.is_finite(),
                };
                if !ok && bad.is_none() {
                    bad = Some(format!("invalid {} severity parameter {v}", kind.name()));
                }
            }
        }
        bad.map_or(Ok(()), |m| Err(config_err(m)))
    }
}

/// Default parameter row for a kind.
pub fn severity_table(kind: CorruptionKind) -> [f64; SEVERITIES] {
    *SeverityTables::default().get(kind)
}

const POISSON_INVERSION_MAX: f64 = 10.0;

/// Inversion for means up to 10, rounded `N(mu, mu)` clamped at zero above.
pub fn poisson(mean: f64, rng: &mut Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean <= POISSON_INVERSION_MAX {
        let u = rng.uniform();
        let mut k = 0.0;
        let mut p = libm::exp(-mean);
        let mut cdf = p;
        while u > cdf {
            k += 1.0;
            p *= mean / k;
            let next = cdf + p;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        k
    } else {
        libm::round(mean + libm::sqrt(mean) * rng.normal()).max(0.0)
    }
}

fn corrupt_pixel(x: f64, kind: CorruptionKind, param: f64, rng: &mut Rng) -> f64 {
    let v = match kind {
        CorruptionKind::Gaussian => x + param * rng.normal(),
        CorruptionKind::Shot => poisson(x * param, rng) / param,
        CorruptionKind::Impulse => {
            let u = rng.uniform();
            if u < param {
                if u < param / 2.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                x
            }
        }
        CorruptionKind::Speckle => x + x * param * rng.normal(),
    };
    v.clamp(0.0, 1.0)
}

/// Corrupts every pixel independently and clamps to `[0, 1]`.
pub fn apply_corruption(images: &Tensor, spec: CorruptionSpec, tables: &SeverityTables, rng: &mut Rng) -> Result<Tensor> {
    CorruptionSpec::new(spec.kind, spec.severity)?;
    tables.validate()?;
    check_pixels(images)?;
    let param = tables.parameter(spec);
    let data: Vec<f64> = images
        .data()
        .iter()
        .map(|&x| corrupt_pixel(x, spec.kind, param, rng))
        .collect();
    Tensor::new(images.shape().to_vec(), data)
}
