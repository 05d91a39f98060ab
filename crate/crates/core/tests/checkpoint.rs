//! Checkpoint persistence.

mod common;

use std::fs;

use common::{lean_data, lean_network, lean_train};
use gated_reid::checkpoint::{checkpoint_precision, load_checkpoint, save_checkpoint};
use gated_reid::data::generate_dataset;
use gated_reid::training::TrainState;
use gated_reid::{train, Precision};

#[test]
fn round_trip_is_bit_exact() {
    let ds = generate_dataset(&lean_data(4, 0.3, 1)).unwrap();
    let cfg = lean_train(1, 2);
    let (state, _) = train::<f32>(&ds, &lean_network(), &cfg).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_checkpoint(&state, &cfg, a.path()).unwrap();
    let back = load_checkpoint::<f32>(a.path()).unwrap();
    assert_eq!(back.state, state);
    assert_eq!(back.train_config, cfg);
    save_checkpoint(&back.state, &back.train_config, b.path()).unwrap();
    for e in fs::read_dir(a.path()).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
    assert_eq!(checkpoint_precision(a.path()).unwrap(), Precision::F32);
}

#[test]
fn f64_round_trip_and_precision_mismatch() {
    let ds = generate_dataset(&lean_data(3, 0.0, 2)).unwrap();
    let cfg = lean_train(1, 0);
    let state = TrainState::<f64>::init(&lean_network(), &cfg, &ds).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&state, &cfg, tmp.path()).unwrap();
    assert_eq!(load_checkpoint::<f64>(tmp.path()).unwrap().state, state);
    assert!(load_checkpoint::<f32>(tmp.path()).is_err());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ds = generate_dataset(&lean_data(3, 0.0, 3)).unwrap();
    let cfg = lean_train(1, 0);
    let state = TrainState::<f32>::init(&lean_network(), &cfg, &ds).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&state, &cfg, tmp.path()).unwrap();
    let bin = tmp.path().join("rnn.bias.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 1]).unwrap();
    assert!(load_checkpoint::<f32>(tmp.path()).is_err());
    fs::write(&bin, &bytes).unwrap();
    fs::remove_file(tmp.path().join("conv2.kernel.bin")).unwrap();
    assert!(load_checkpoint::<f32>(tmp.path()).is_err());
    assert!(load_checkpoint::<f32>(&tmp.path().join("missing")).is_err());
}

#[test]
fn manifest_lists_config_and_tensors() {
    let ds = generate_dataset(&lean_data(3, 0.0, 4)).unwrap();
    let cfg = lean_train(1, 0);
    let state = TrainState::<f32>::init(&lean_network(), &cfg, &ds).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&state, &cfg, tmp.path()).unwrap();
    let m = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    for needle in ["precision = f32", "byte_order = little", "config.fusion = f4", "tensor = rnn.weight 32x"] {
        assert!(m.contains(needle), "{needle}");
    }
}
