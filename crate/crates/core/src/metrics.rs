//! Accuracy, corruption accuracy aggregates and RMS calibration error.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corruptions::{apply_corruption, CorruptionKind, CorruptionSpec, SeverityTables, SEVERITIES};
use crate::datasets::Dataset;
use crate::error::{config_err, Error, Result};
use crate::models::{argmax_rows, Model};
use crate::rng::Rng;
use crate::training::Inference;

const CORRUPT_STREAM: u64 = 0xC0AA;
const INFER_STREAM: u64 = 0x1AFE;

pub const DEFAULT_BINS: usize = 15;

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            op: "accuracy",
            left: vec![predictions.len()],
            right: vec![labels.len()],
        });
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Mean of every entry of a kind-by-severity accuracy matrix.
pub fn mca(matrix: &[Vec<f64>]) -> Result<f64> {
    let n: usize = matrix.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::Empty("accuracy matrix"));
    }
    Ok(matrix.iter().flatten().sum::<f64>() / n as f64)
}

/// [`mca`] over the rows whose kind is in `include`; `rows[m]` labels `matrix[m]`.
pub fn mca_noise(matrix: &[Vec<f64>], rows: &[CorruptionKind], include: &[CorruptionKind]) -> Result<f64> {
    if include.is_empty() {
        return Err(Error::Empty("mCA-N kind set"));
    }
    if rows.len() != matrix.len() {
        return Err(Error::DimensionMismatch {
            op: "mca_noise",
            left: vec![matrix.len()],
            right: vec![rows.len()],
        });
    }
    let mut picked = Vec::with_capacity(include.len());
    for kind in include {
        let m = rows
            .iter()
            .position(|r| r == kind)
            .ok_or_else(|| config_err(format!("kind {} not present in accuracy matrix", kind.name())))?;
        picked.push(matrix[m].clone());
    }
    mca(&picked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationInput {
    /// Top-class probability per sample.
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
    pub n_bins: usize,
}

impl CalibrationInput {
    /// Confidences and correctness from class probabilities `[B, K]`.
    pub fn from_probs(probs: &[f64], k: usize, labels: &[usize], n_bins: usize) -> Self {
        let pred = argmax_rows(probs, k);
        let confidences = probs
            .chunks(k)
            .zip(&pred)
            .map(|(row, &c)| row[c])
            .collect();
        let correct = pred.iter().zip(labels).map(|(p, l)| p == l).collect();
        Self {
            confidences,
            correct,
            n_bins,
        }
    }

    pub fn extend(&mut self, other: &CalibrationInput) {
        self.confidences.extend_from_slice(&other.confidences);
        self.correct.extend_from_slice(&other.correct);
    }
}

/// Root of the bin-weighted mean squared gap between bin accuracy and bin confidence,
/// with equal-width bins over `[0, 1]`.
pub fn rms_calibration_error(input: &CalibrationInput) -> Result<f64> {
    let n = input.confidences.len();
    if n == 0 {
        return Err(Error::Empty("calibration samples"));
    }
    if input.n_bins == 0 {
        return Err(config_err("n_bins must be >= 1"));
    }
    if input.correct.len() != n {
        return Err(Error::DimensionMismatch {
            op: "rms_calibration_error",
            left: vec![n],
            right: vec![input.correct.len()],
        });
    }
    let nb = input.n_bins;
    let mut count = vec![0usize; nb];
    let mut conf = vec![0.0; nb];
    let mut hits = vec![0.0; nb];
    for (index, (&c, &ok)) in input.confidences.iter().zip(&input.correct).enumerate() {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::ConfidenceOutOfRange { index, value: c });
        }
        let b = ((c * nb as f64) as usize).min(nb - 1);
        count[b] += 1;
        conf[b] += c;
        if ok {
            hits[b] += 1.0;
        }
    }
    let mut total = 0.0;
    for b in 0..nb {
        if count[b] > 0 {
            let m = count[b] as f64;
            let gap = hits[b] / m - conf[b] / m;
            total += m / n as f64 * gap * gap;
        }
    }
    Ok(libm::sqrt(total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub kinds: Vec<CorruptionKind>,
    /// Kinds averaged into mCA-N and RMSE-N.
    pub noise_kinds: Vec<CorruptionKind>,
    pub tables: SeverityTables,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            kinds: CorruptionKind::ALL.to_vec(),
            noise_kinds: CorruptionKind::NOISE.to_vec(),
            tables: SeverityTables::default(),
            n_bins: DEFAULT_BINS,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(config_err("n_bins must be >= 1"));
        }
        self.tables.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub kind: CorruptionKind,
    pub severity: usize,
    pub accuracy: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub seed: u64,
    pub clean_accuracy: f64,
    pub clean_rmse: f64,
    /// Row order of [`EvalReport::matrix`].
    pub kinds: Vec<CorruptionKind>,
    /// Kind-major, severity 1 to 5.
    pub cells: Vec<CellResult>,
    pub mca: Option<f64>,
    pub mca_n: Option<f64>,
    pub corrupt_rmse: Option<f64>,
    pub corrupt_rmse_n: Option<f64>,
}

impl EvalReport {
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(SEVERITIES)
            .map(|row| row.iter().map(|c| c.accuracy).collect())
            .collect()
    }
}

fn score(
    model: &Model,
    images: &crate::tensor::Tensor,
    labels: &[usize],
    inference: Inference,
    n_bins: usize,
    rng: &mut Rng,
) -> Result<(f64, CalibrationInput)> {
    let k = model.num_classes();
    let p = inference.probs(model, images, rng)?;
    let cal = CalibrationInput::from_probs(p.data(), k, labels, n_bins);
    let acc = cal.correct.iter().filter(|&&c| c).count() as f64 / labels.len() as f64;
    Ok((acc, cal))
}

/// Clean and per-corruption scores for one model on one test set.
pub fn evaluate(model: &Model, test: &Dataset, inference: Inference, config: &EvalConfig, model_id: &str) -> Result<EvalReport> {
    config.validate()?;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let seed = config.seed;
    let mut rng = Rng::stream(seed, &[INFER_STREAM, 0, 0]);
    let (clean_accuracy, clean_cal) = score(model, &test.images, &test.labels, inference, config.n_bins, &mut rng)?;
    let clean_rmse = rms_calibration_error(&clean_cal)?;

    let mut cells = Vec::new();
    let mut pooled: Option<CalibrationInput> = None;
    let mut pooled_n: Option<CalibrationInput> = None;
    for &kind in &config.kinds {
        for severity in 1..=SEVERITIES {
            let spec = CorruptionSpec::new(kind, severity)?;
            let [a, b] = spec.tags();
            let mut crng = Rng::stream(seed, &[CORRUPT_STREAM, a, b]);
            let corrupted = apply_corruption(&test.images, spec, &config.tables, &mut crng)?;
            let mut irng = Rng::stream(seed, &[INFER_STREAM, a, b]);
            let (acc, cal) = score(model, &corrupted, &test.labels, inference, config.n_bins, &mut irng)?;
            cells.push(CellResult {
                kind,
                severity,
                accuracy: acc,
                n_samples: test.len(),
            });
            match pooled.as_mut() {
                Some(p) => p.extend(&cal),
                None => pooled = Some(cal.clone()),
            }
            if config.noise_kinds.contains(&kind) {
                match pooled_n.as_mut() {
                    Some(p) => p.extend(&cal),
                    None => pooled_n = Some(cal),
                }
            }
        }
    }

    let mut report = EvalReport {
        model_id: model_id.into(),
        dataset_id: test.id.clone(),
        seed,
        clean_accuracy,
        clean_rmse,
        kinds: config.kinds.clone(),
        cells,
        mca: None,
        mca_n: None,
        corrupt_rmse: pooled.as_ref().map(rms_calibration_error).transpose()?,
        corrupt_rmse_n: pooled_n.as_ref().map(rms_calibration_error).transpose()?,
    };
    if !report.cells.is_empty() {
        let a = report.matrix();
        report.mca = Some(mca(&a)?);
        let noise: Vec<CorruptionKind> = config
            .noise_kinds
            .iter()
            .copied()
            .filter(|k| config.kinds.contains(k))
            .collect();
        if !noise.is_empty() {
            report.mca_n = Some(mca_noise(&a, &config.kinds, &noise)?);
        }
    }
    Ok(report)
}
