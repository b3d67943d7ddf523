use dign::config::ExperimentConfig;
use dign::idx::{encode_images, encode_labels, load_cache, load_idx, parse_images, parse_labels, save_cache, write_idx};
use dign::model_io;
use dign::CliError;
use dign_core::datasets::{generate_synth, SynthSpec};
use dign_core::models::{Model, ModelSpec};
use proptest::prelude::*;

fn small() -> SynthSpec {
    SynthSpec {
        train_per_class: 6,
        val_per_class: 2,
        test_per_class: 3,
        ..SynthSpec::default()
    }
}

#[test]
fn idx_round_trip_is_quantized_to_bytes() {
    let (tr, _, _) = generate_synth(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    write_idx(&tr, &ip, &lp).unwrap();
    let back = load_idx(&ip, &lp).unwrap();
    assert_eq!(back.labels, tr.labels);
    assert_eq!(back.images.shape(), tr.images.shape());
    for (a, b) in tr.images.data().iter().zip(back.images.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-15);
        assert_eq!((b * 255.0).round() / 255.0, *b);
    }
    write_idx(&back, &ip, &lp).unwrap();
    assert_eq!(load_idx(&ip, &lp).unwrap(), back);
}

#[test]
fn cache_keeps_the_dataset() {
    let (_, _, te) = generate_synth(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_cache(dir.path(), "test", &te, &[("seed", "0".into())]).unwrap();
    let back = load_cache(dir.path(), "test").unwrap();
    assert_eq!(back.labels, te.labels);
    assert_eq!(back.num_classes, te.num_classes);
}

#[test]
fn missing_idx_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = load_idx(&dir.path().join("a"), &dir.path().join("b")).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains(&dir.path().join("a").display().to_string()));
}

#[test]
fn mismatched_counts_are_rejected() {
    let (tr, _, _) = generate_synth(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, encode_images(&tr.images).unwrap()).unwrap();
    std::fs::write(&lp, encode_labels(&tr.labels[1..]).unwrap()).unwrap();
    assert!(load_idx(&ip, &lp).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn idx_parsers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_images(&bytes);
        let _ = parse_labels(&bytes);
    }

    #[test]
    fn label_encoding_round_trips(labels in prop::collection::vec(0usize..10, 1..50)) {
        prop_assert_eq!(parse_labels(&encode_labels(&labels).unwrap()).unwrap(), labels);
    }
}

#[test]
fn model_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in [ModelSpec::mlp_64_32([1, 16, 16], 4), ModelSpec::tiny_cnn([1, 8, 8], 3)]
        .into_iter()
        .enumerate()
    {
        let m = Model::init(spec, i as u64).unwrap();
        let p = dir.path().join(format!("m{i}.txt"));
        model_io::save(&m, &p).unwrap();
        assert_eq!(model_io::load(&p).unwrap(), m);
    }
}

#[test]
fn truncated_model_file_is_rejected() {
    let m = Model::init(ModelSpec::mlp_64_32([1, 4, 4], 2), 0).unwrap();
    let text = model_io::to_text(&m);
    let cut = &text[..text.len() / 2];
    let e = model_io::from_text(cut, "m.txt".as_ref()).unwrap_err();
    assert!(matches!(e, CliError::ModelFormat { .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn config_round_trips_through_json() {
    let mut c = ExperimentConfig::from_json(r#"{"train": {"method": "dign", "epochs": 4}, "seeds": [5, 6]}"#).unwrap();
    c.validate().unwrap();
    let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    c.seeds = vec![1, 1];
    assert_eq!(c.validate().unwrap_err().exit_code(), 1);
}

#[test]
fn idx_dataset_config_needs_all_paths() {
    let text = r#"{"dataset": {"idx": {"train_images": "a", "train_labels": "b"}}}"#;
    assert!(ExperimentConfig::from_json(text).is_err());
}
