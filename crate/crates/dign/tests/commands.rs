use std::fs;
use std::path::Path;
use std::process::Command;

use dign::commands::*;
use dign::config::{ExperimentConfig, SweepBlock};
use dign::model_io;
use dign::records::{mean_std, read_csv, read_json, DetailRow, EvalRecord, SummaryRow, SweepRow, TrainAggregateRow};
use dign_core::landscape::{hessian_ce, SquareMatrix};
use dign_core::models::Model;
use dign_core::Tensor;

const SMALL: &str = r#"{
    "dataset": {"synth": {"train_per_class": 30, "val_per_class": 8, "test_per_class": 15}},
    "train": {"method": "dign", "epochs": 2, "batch_size": 16},
    "seeds": [0, 1, 2],
    "verify": {"inputs": 3, "mc_draws": 200, "surrogate_deltas": 100}
}"#;

fn small() -> ExperimentConfig {
    let c = ExperimentConfig::from_json(SMALL).unwrap();
    c.validate().unwrap();
    c
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let mut c = small();
    c.train.epochs = 0;
    c.seeds = vec![4];
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&c, dir.path()).unwrap();
    let (tr, _, _) = c.load_datasets().unwrap();
    let init = Model::init(c.model_spec(tr.image_shape(), tr.num_classes), 4).unwrap();
    let written = fs::read_to_string(dir.path().join(model_file(4))).unwrap();
    assert_eq!(written, model_io::to_text(&init));
}

#[test]
fn three_seeds_give_three_models_and_one_aggregate_row() {
    let c = small();
    let dir = tempfile::tempdir().unwrap();
    let runs = cmd_train(&c, dir.path()).unwrap();
    assert_eq!(runs.len(), 3);
    for s in [0, 1, 2] {
        assert!(dir.path().join(model_file(s)).is_file());
        assert!(dir.path().join(history_file(s)).is_file());
    }
    let agg: Vec<TrainAggregateRow> = read_csv(&dir.path().join("train_aggregate.csv")).unwrap();
    assert_eq!(agg.len(), 1);
    assert_eq!(agg[0].n_seeds, 3);
}

#[test]
fn eval_outputs_agree_with_each_other() {
    let c = small();
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&c, dir.path()).unwrap();
    let rec = cmd_eval(&c, dir.path(), None).unwrap();
    let json: EvalRecord = read_json(&dir.path().join("eval_report.json")).unwrap();
    assert_eq!(json, rec);
    let summary: Vec<SummaryRow> = read_csv(&dir.path().join("eval_summary.csv")).unwrap();
    assert_eq!(summary.len(), 3);
    for (doc, row) in rec.reports.iter().zip(&summary) {
        assert_eq!(&doc.summary(), row);
        let detail: Vec<DetailRow> = read_csv(&dir.path().join(detail_file(doc.seed))).unwrap();
        assert_eq!(detail, doc.cells);
        assert_eq!(detail.len(), 4 * 5);
        let mean = detail.iter().map(|r| r.accuracy).sum::<f64>() / detail.len() as f64;
        assert!((mean - row.mca.unwrap()).abs() <= 1e-12);
    }
    for a in &rec.aggregate {
        let v: Vec<f64> = summary
            .iter()
            .filter_map(|r| match a.metric.as_str() {
                "clean_acc" => Some(r.clean_acc),
                "mca" => r.mca,
                "mca_n" => r.mca_n,
                "rmse_clean" => Some(r.rmse_clean),
                "rmse_n" => r.rmse_n,
                _ => None,
            })
            .collect();
        if v.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&v);
        assert!((m - a.mean).abs() <= 1e-12 && (s - a.std).abs() <= 1e-12, "{}", a.metric);
    }
    let report = cmd_report(&c, dir.path()).unwrap();
    assert_eq!(report.seeds.len(), 3);
    assert_eq!(report.aggregate, rec.aggregate);
    assert_eq!(report.seeds[1].history.len(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let c = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        cmd_train(&c, d).unwrap();
        cmd_eval(&c, d, None).unwrap();
        cmd_report(&c, d).unwrap();
    }
    assert_eq!(files(a.path()), files(b.path()));
    cmd_train(&c, a.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn one_point_sweep_matches_train_then_eval() {
    let mut c = small();
    c.seeds = vec![1];
    c.sweep = Some(SweepBlock {
        lambda: vec![0.3],
        ..SweepBlock::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_sweep(&c, dir.path()).unwrap();
    let mut t = c.clone();
    t.train.lambda = 0.3;
    let rec = {
        cmd_train(&t, dir.path()).unwrap();
        cmd_eval(&t, dir.path(), None).unwrap()
    };
    let r = &rec.reports[0];
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].clean_acc, rows[0].mca, rows[0].mca_n), (r.clean_accuracy, r.mca, r.mca_n));
}

#[test]
fn sweep_rows_are_sorted_and_complete() {
    let mut c = small();
    c.seeds = vec![2, 0];
    c.train.epochs = 1;
    c.sweep = Some(SweepBlock {
        lambda: vec![0.4, 0.05],
        n_samples: vec![2, 1],
        ..SweepBlock::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_sweep(&c, dir.path()).unwrap();
    assert_eq!(rows.len(), 4 * 2);
    let keys: Vec<(f64, usize)> = rows.iter().map(|r| (r.lambda, r.n_samples)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    assert_eq!(keys, sorted);
    let csv: Vec<SweepRow> = read_csv(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv, rows);
}

#[test]
fn empty_sweep_grid_is_rejected() {
    let mut c = small();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cmd_sweep(&c, dir.path()).unwrap_err().exit_code(), 1);
    c.sweep = Some(SweepBlock::default());
    assert_eq!(cmd_sweep(&c, dir.path()).unwrap_err().exit_code(), 1);
    assert!(!dir.path().join("sweep.csv").exists());
}

fn zero_model(c: &ExperimentConfig) -> Model {
    let (_, _, te) = c.load_datasets().unwrap();
    let m = Model::init(c.model_spec(te.image_shape(), te.num_classes), 0).unwrap();
    let zeros: Vec<Tensor> = m.params().tensors().map(|t| Tensor::zeros(t.shape())).collect();
    let mut z = m.clone();
    z.set_params(zeros).unwrap();
    z
}

#[test]
fn zero_weight_model_passes_the_identity_checks() {
    let c = small();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("zero.txt");
    model_io::save(&zero_model(&c), &p).unwrap();
    let v = cmd_verify(&c, dir.path(), Some(&p)).unwrap();
    for name in [
        "hessian_equals_fisher",
        "curvature_symmetry",
        "weighted_jacobian_rows_vanish",
        "gradnorm_identity",
        "fisher_trace_identity",
        "uniform_moment",
        "quadratic_surrogate_bound",
    ] {
        let r = v.checks.iter().find(|r| r.check == name).unwrap();
        assert!(r.passed, "{r:?}");
        if name != "uniform_moment" {
            assert_eq!(r.measured, 0.0, "{name}");
        }
    }
}

#[test]
fn corrupted_hessian_fails_its_check() {
    let c = small();
    let dir = tempfile::tempdir().unwrap();
    let bad = |m: &Model, x: &Tensor, y: usize| -> dign_core::Result<SquareMatrix> {
        let h = hessian_ce(m, x, y)?;
        let mut data = h.data().to_vec();
        data[0] += 1e-6;
        SquareMatrix::new(h.dim(), data)
    };
    let v = cmd_verify_with(&c, dir.path(), None, &bad).unwrap();
    let r = v.checks.iter().find(|r| r.check == "hessian_equals_fisher").unwrap();
    assert!(!r.passed);
    assert!(v.failures() >= 1);
    let good = cmd_verify(&c, dir.path(), None).unwrap();
    assert!(good.checks.iter().find(|r| r.check == "hessian_equals_fisher").unwrap().passed);
}

fn dign(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dign"))
        .args(args)
        .env("DIGN_THREADS", "2")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.json");
    fs::write(&cfg, SMALL).unwrap();
    let (cfg, out) = (cfg.to_str().unwrap(), d.join("run"));
    let out = out.to_str().unwrap();

    let (code, text) = dign(&["train", "--config", cfg, "--out", out, "--seed", "7"]);
    assert_eq!(code, 0, "{text}");
    assert!(Path::new(out).join(model_file(7)).is_file());
    let (code, text) = dign(&["eval", "--config", cfg, "--out", out, "--seed", "7"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("mca_n"));
    let (code, text) = dign(&["report", "--config", cfg, "--out", out, "--seed", "7"]);
    assert_eq!(code, 0, "{text}");

    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"train": {"lamda": 1}}"#).unwrap();
    assert_eq!(dign(&["train", "--config", bad.to_str().unwrap(), "--out", out]).0, 1);
    assert_eq!(dign(&["train", "--config", cfg, "--out", out, "--preset", "nope"]).0, 1);
    let missing = d.join("nothing.txt");
    let (code, text) = dign(&["eval", "--config", cfg, "--out", out, "--model", missing.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(text.contains("nothing.txt"), "{text}");
    assert_eq!(dign(&["train", "--config", d.join("absent.json").to_str().unwrap()]).0, 3);

    let zero = d.join("zero.txt");
    model_io::save(&zero_model(&small()), &zero).unwrap();
    let (code, text) = dign(&["verify", "--config", cfg, "--out", out, "--model", zero.to_str().unwrap()]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("PASS hessian_equals_fisher") && text.contains("FAIL kl_gauss_ratio"), "{text}");
}

#[test]
fn bad_thread_count_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dign"))
        .args(["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .env("DIGN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
