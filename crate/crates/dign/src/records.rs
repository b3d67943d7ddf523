//! CSV rows and JSON documents written by the commands.

use std::fs;
use std::path::Path;

use dign_core::metrics::EvalReport;
use dign_core::training::TrainHistory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::KindName;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
    pub selected: bool,
}

pub fn history_rows(h: &TrainHistory) -> Vec<HistoryRow> {
    h.epochs
        .iter()
        .map(|e| HistoryRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_accuracy: e.val_accuracy,
            learning_rate: e.learning_rate,
            selected: h.selected_epoch == Some(e.epoch),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummaryRow {
    pub seed: u64,
    pub selected_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
}

impl TrainSummaryRow {
    pub fn new(seed: u64, h: &TrainHistory) -> Self {
        Self {
            seed,
            selected_epoch: h.selected_epoch,
            best_val_accuracy: h.selected_epoch.map(|e| h.epochs[e].val_accuracy),
            final_train_loss: h.epochs.last().map(|e| e.train_loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainAggregateRow {
    pub n_seeds: usize,
    pub best_val_accuracy_mean: Option<f64>,
    pub best_val_accuracy_std: Option<f64>,
    pub final_train_loss_mean: Option<f64>,
    pub final_train_loss_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub corruption: KindName,
    pub severity: usize,
    pub accuracy: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub clean_acc: f64,
    pub mca: Option<f64>,
    pub mca_n: Option<f64>,
    pub rmse_clean: f64,
    pub rmse_n: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub model_id: String,
    pub dataset_id: String,
    pub seed: u64,
    pub clean_accuracy: f64,
    pub clean_rmse: f64,
    pub mca: Option<f64>,
    pub mca_n: Option<f64>,
    pub corrupt_rmse: Option<f64>,
    pub corrupt_rmse_n: Option<f64>,
    pub cells: Vec<DetailRow>,
}

impl EvalDoc {
    pub fn from_report(r: &EvalReport) -> Self {
        Self {
            model_id: r.model_id.clone(),
            dataset_id: r.dataset_id.clone(),
            seed: r.seed,
            clean_accuracy: r.clean_accuracy,
            clean_rmse: r.clean_rmse,
            mca: r.mca,
            mca_n: r.mca_n,
            corrupt_rmse: r.corrupt_rmse,
            corrupt_rmse_n: r.corrupt_rmse_n,
            cells: r
                .cells
                .iter()
                .map(|c| DetailRow {
                    corruption: c.kind.into(),
                    severity: c.severity,
                    accuracy: c.accuracy,
                    n_samples: c.n_samples,
                })
                .collect(),
        }
    }

    pub fn summary(&self) -> SummaryRow {
        SummaryRow {
            clean_acc: self.clean_accuracy,
            mca: self.mca,
            mca_n: self.mca_n,
            rmse_clean: self.clean_rmse,
            rmse_n: self.corrupt_rmse_n,
            seed: self.seed,
        }
    }
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Aggregates over the seeds where the metric is defined.
pub fn aggregate(docs: &[EvalDoc]) -> Vec<Aggregate> {
    let metrics: [(&str, fn(&EvalDoc) -> Option<f64>); 6] = [
        ("clean_acc", |d| Some(d.clean_accuracy)),
        ("mca", |d| d.mca),
        ("mca_n", |d| d.mca_n),
        ("rmse_clean", |d| Some(d.clean_rmse)),
        ("rmse", |d| d.corrupt_rmse),
        ("rmse_n", |d| d.corrupt_rmse_n),
    ];
    metrics
        .iter()
        .filter_map(|(name, f)| {
            let v: Vec<f64> = docs.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| {
                let (mean, std) = mean_std(&v);
                Aggregate {
                    metric: (*name).into(),
                    n: v.len(),
                    mean,
                    std,
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub config_hash: String,
    pub reports: Vec<EvalDoc>,
    pub aggregate: Vec<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub history: Vec<HistoryRow>,
    pub eval: EvalDoc,
}

/// Everything one configuration produced, across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seeds: Vec<SeedRecord>,
    pub aggregate: Vec<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub sigma_max: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub clean_acc: f64,
    pub mca_n: Option<f64>,
    pub mca: Option<f64>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Header plus rows, LF line endings.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_bytes(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("records serialize");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
