//! Run configuration files.

use std::fs;

use gated_reid::{Error, FusionMode, GateMode, Precision, RunConfig};

#[test]
fn resolved_text_loads_back_unchanged() {
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&[
        "net.fusion=f2",
        "train.batches_per_epoch=3",
        "data.seed=7",
        "precision=f64",
        "dataset_dir=d",
    ])
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = cfg.echo_to(tmp.path()).unwrap();
    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.network.fusion, FusionMode::F2);
    assert_eq!(back.train.batches_per_epoch, Some(3));
    assert_eq!(back.precision, Precision::F64);
}

#[test]
fn file_with_comments_and_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("run.cfg");
    fs::write(&path, "# ablation\nnet.gate_mode = none\n\ntrain.use_regularizer = false\n").unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.network.gate_mode, GateMode::None);
    assert!(!cfg.train.use_regularizer);
    assert_eq!(cfg.network.fusion, FusionMode::F4);
    assert_eq!((cfg.network.height, cfg.network.width), (56, 28));
    cfg.validate().unwrap();
}

#[test]
fn invalid_settings_are_rejected() {
    let invalid = |overrides: &[&str]| {
        let mut cfg = RunConfig::default();
        match cfg.apply_overrides(overrides).and_then(|_| cfg.validate()) {
            Err(Error::InvalidConfig(_)) => {}
            other => panic!("{overrides:?}: expected invalid config, got {other:?}"),
        }
    };
    invalid(&["unknown=1"]);
    invalid(&["net.unknown=1"]);
    invalid(&["net.fusion=f5"]);
    invalid(&["train.epochs=many"]);
    invalid(&["no_equals_sign"]);
    invalid(&["precision=f16"]);
    invalid(&["threads=0"]);
    invalid(&["split_fraction=1"]);
    invalid(&["train.crop_height=48"]);
    invalid(&["net.height=72", "train.crop_height=72"]);
}

#[test]
fn malformed_file_is_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.cfg");
    fs::write(&path, "net.fusion f4\n").unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Format { .. })));
    assert!(matches!(RunConfig::load(&tmp.path().join("none.cfg")), Err(Error::Io { .. })));
}
