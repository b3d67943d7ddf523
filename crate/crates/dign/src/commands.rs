//! `train`, `eval`, `verify`, `sweep` and `report`.

use std::fs;
use std::path::{Path, PathBuf};

use dign_core::datasets::Dataset;
use dign_core::landscape::hessian_ce;
use dign_core::metrics::evaluate;
use dign_core::models::Model;
use dign_core::training::{train, TrainHistory};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::model_io;
use crate::records::*;
use crate::verify::{run_checks, CheckResult, HessianFn};

pub fn model_file(seed: u64) -> String {
    format!("model_seed{seed}.txt")
}

pub fn history_file(seed: u64) -> String {
    format!("history_seed{seed}.csv")
}

pub fn detail_file(seed: u64) -> String {
    format!("eval_detail_seed{seed}.csv")
}

/// Job parallelism from `DIGN_THREADS`, else the machine's.
pub fn thread_count() -> Result<usize> {
    match std::env::var("DIGN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Validation(format!("DIGN_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs independent jobs on a bounded pool; results keep input order.
fn run_jobs<I, T, F>(items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn model_id(config: &ExperimentConfig, seed: u64) -> String {
    format!("{}-seed{seed}", config.train.config(seed).method.name())
}

pub struct TrainRun {
    pub seed: u64,
    pub model: Model,
    pub history: TrainHistory,
}

fn train_one(config: &ExperimentConfig, seed: u64, data: &(Dataset, Dataset, Dataset)) -> Result<TrainRun> {
    let (tr, va, _) = data;
    let spec = config.model_spec(tr.image_shape(), tr.num_classes);
    let (model, history) = train(&config.train.config(seed), spec, tr, va)?;
    Ok(TrainRun { seed, model, history })
}

/// Trains every seed and writes models, histories and the seed summary.
pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<Vec<TrainRun>> {
    config.validate()?;
    let data = config.load_datasets()?;
    ensure_dir(out)?;
    let runs = run_jobs(&config.seeds, |&seed| train_one(config, seed, &data))?;
    let mut summary = Vec::with_capacity(runs.len());
    for r in &runs {
        model_io::save(&r.model, &out.join(model_file(r.seed)))?;
        write_csv(&out.join(history_file(r.seed)), &history_rows(&r.history))?;
        summary.push(TrainSummaryRow::new(r.seed, &r.history));
    }
    write_csv(&out.join("train_summary.csv"), &summary)?;
    let stat = |f: fn(&TrainSummaryRow) -> Option<f64>| {
        let v: Vec<f64> = summary.iter().filter_map(f).collect();
        if v.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
    };
    let (acc_m, acc_s) = stat(|r| r.best_val_accuracy);
    let (loss_m, loss_s) = stat(|r| r.final_train_loss);
    write_csv(
        &out.join("train_aggregate.csv"),
        &[TrainAggregateRow {
            n_seeds: summary.len(),
            best_val_accuracy_mean: acc_m,
            best_val_accuracy_std: acc_s,
            final_train_loss_mean: loss_m,
            final_train_loss_std: loss_s,
        }],
    )?;
    fs::write(out.join("config.json"), config.to_json() + "\n").map_err(|e| CliError::io(&out.join("config.json"), e))?;
    Ok(runs)
}

/// Scores one model per seed (or the single `--model` file under the first seed).
pub fn cmd_eval(config: &ExperimentConfig, out: &Path, model_path: Option<&Path>) -> Result<EvalRecord> {
    config.validate()?;
    let jobs: Vec<(u64, PathBuf)> = match model_path {
        Some(p) => vec![(config.seeds[0], p.to_path_buf())],
        None => config.seeds.iter().map(|&s| (s, out.join(model_file(s)))).collect(),
    };
    let models: Vec<(u64, Model)> = jobs
        .iter()
        .map(|(s, p)| Ok((*s, model_io::load(p)?)))
        .collect::<Result<_>>()?;
    let (_, _, test) = config.load_datasets()?;
    ensure_dir(out)?;
    let docs = run_jobs(&models, |(seed, model)| {
        let inference = config.train.config(*seed).inference();
        let r = evaluate(model, &test, inference, &config.eval_config(*seed), &model_id(config, *seed))?;
        Ok(EvalDoc::from_report(&r))
    })?;
    for d in &docs {
        write_csv(&out.join(detail_file(d.seed)), &d.cells)?;
    }
    write_csv(&out.join("eval_summary.csv"), &docs.iter().map(EvalDoc::summary).collect::<Vec<_>>())?;
    let record = EvalRecord {
        config_hash: config.hash(),
        aggregate: aggregate(&docs),
        reports: docs,
    };
    write_json(&out.join("eval_report.json"), &record)?;
    Ok(record)
}

pub struct VerifyOutcome {
    pub checks: Vec<CheckResult>,
}

impl VerifyOutcome {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

/// Curvature checks on a trained model file, or on the untrained first-seed model.
pub fn cmd_verify(config: &ExperimentConfig, out: &Path, model_path: Option<&Path>) -> Result<VerifyOutcome> {
    cmd_verify_with(config, out, model_path, &hessian_ce)
}

pub fn cmd_verify_with(
    config: &ExperimentConfig,
    out: &Path,
    model_path: Option<&Path>,
    hessian: &HessianFn,
) -> Result<VerifyOutcome> {
    config.validate()?;
    let (_, _, test) = config.load_datasets()?;
    let model = match model_path {
        Some(p) => model_io::load(p)?,
        None => Model::init(config.model_spec(test.image_shape(), test.num_classes), config.seeds[0])?,
    };
    let checks = run_checks(&model, &test, &config.verify, hessian)?;
    ensure_dir(out)?;
    write_csv(&out.join("verify.csv"), &checks)?;
    write_json(&out.join("verify.json"), &checks)?;
    Ok(VerifyOutcome { checks })
}

/// Train + eval at every grid point and seed; rows sorted by grid point then seed.
pub fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let grid = config.sweep_grid();
    if grid.is_empty() {
        return Err(CliError::Validation("sweep grid is empty".into()));
    }
    let data = config.load_datasets()?;
    ensure_dir(out)?;
    let jobs: Vec<((f64, f64, usize), u64)> = grid
        .iter()
        .flat_map(|&p| config.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let rows = run_jobs(&jobs, |&((lambda, sigma_max, n_samples), seed)| {
        let mut c = config.clone();
        c.train.lambda = lambda;
        c.train.sigma_max = sigma_max;
        c.train.n_samples = n_samples;
        let run = train_one(&c, seed, &data)?;
        let inference = c.train.config(seed).inference();
        let r = evaluate(&run.model, &data.2, inference, &c.eval_config(seed), &model_id(&c, seed))?;
        Ok(SweepRow {
            lambda,
            sigma_max,
            n_samples,
            seed,
            clean_acc: r.clean_accuracy,
            mca_n: r.mca_n,
            mca: r.mca,
        })
    })?;
    write_csv(&out.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// Joins histories and evaluation reports found in `out` into one run record.
pub fn cmd_report(config: &ExperimentConfig, out: &Path) -> Result<RunRecord> {
    config.validate()?;
    let eval: EvalRecord = read_json(&out.join("eval_report.json"))?;
    let mut seeds = Vec::with_capacity(eval.reports.len());
    for doc in &eval.reports {
        let history = read_csv(&out.join(history_file(doc.seed)))?;
        seeds.push(SeedRecord {
            seed: doc.seed,
            history,
            eval: doc.clone(),
        });
    }
    let record = RunRecord {
        config_hash: config.hash(),
        aggregate: aggregate(&eval.reports),
        seeds,
    };
    write_json(&out.join("run_record.json"), &record)?;
    Ok(record)
}
