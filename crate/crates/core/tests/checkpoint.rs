use std::fs;

use sparsefilter_core::data::synthetic_blobs;
use sparsefilter_core::train::{
    evaluate, load_checkpoint, read_events, read_metrics_csv, save_checkpoint, write_events,
    write_metrics_csv, MANIFEST_FILE, PARAMS_FILE,
};
use sparsefilter_core::{build_lenet, Error, RegMode, RegularizerConfig, TrainConfig, Trainer};

fn trained() -> Trainer {
    let train = synthetic_blobs(10, 10, [1, 28, 28], 1).unwrap();
    let test = synthetic_blobs(10, 5, [1, 28, 28], 2).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 25,
        reg: RegularizerConfig::new(RegMode::Ratio, 0.5).unwrap(),
        ..Default::default()
    };
    let mut t = Trainer::new(build_lenet([1, 28, 28], 1).unwrap(), cfg).unwrap();
    t.config.prune.threshold = 0.05;
    t.run(&train, &test, |_| {}).unwrap();
    t
}

#[test]
fn round_trip_is_bit_exact() {
    let t = trained();
    let ckpt = t.checkpoint();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &ckpt).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.network.params(), ckpt.network.params());
    assert_eq!(loaded.mask, ckpt.mask);
    assert_eq!(loaded.velocity, ckpt.velocity);
    assert_eq!(loaded.config, ckpt.config);
    assert_eq!(loaded.history, ckpt.history);

    let again = tempfile::tempdir().unwrap();
    save_checkpoint(again.path(), &loaded).unwrap();
    for f in [MANIFEST_FILE, PARAMS_FILE] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap());
    }

    let test = synthetic_blobs(10, 5, [1, 28, 28], 2).unwrap();
    assert_eq!(evaluate(&loaded.network, &test).unwrap(), evaluate(&t.network, &test).unwrap());
}

#[test]
fn manifest_layout() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trained().checkpoint()).unwrap();
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m["format_version"], 1);
    assert_eq!(m["architecture"]["name"], "lenet");
    assert_eq!(m["mask"].as_array().unwrap().len(), 2);
    let tensors = m["tensors"].as_array().unwrap();
    assert_eq!(tensors[0]["name"], "conv1.weight");
    assert_eq!(tensors[0]["shape"], serde_json::json!([20, 1, 5, 5]));
    assert_eq!(tensors[0]["offset"], 0);
    assert_eq!(tensors[0]["length"], 2000);
    let last = tensors.last().unwrap();
    let end = last["offset"].as_u64().unwrap() + last["length"].as_u64().unwrap();
    assert_eq!(end, fs::metadata(dir.path().join(PARAMS_FILE)).unwrap().len());
}

#[test]
fn truncated_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trained().checkpoint()).unwrap();
    let p = dir.path().join(PARAMS_FILE);
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
}

#[test]
fn version_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trained().checkpoint()).unwrap();
    let p = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
    fs::write(&p, text).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("nope")), Err(Error::Io(_))));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let train = synthetic_blobs(10, 10, [1, 28, 28], 1).unwrap();
    let test = synthetic_blobs(10, 5, [1, 28, 28], 2).unwrap();
    let mut full = trained();
    full.config.epochs = 3;
    let mut half = trained();
    half.config.epochs = 3;
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &half.checkpoint()).unwrap();
    let mut resumed = Trainer::from_checkpoint(load_checkpoint(dir.path()).unwrap()).unwrap();
    full.run(&train, &test, |_| {}).unwrap();
    resumed.run(&train, &test, |_| {}).unwrap();
    assert_eq!(full.network.params(), resumed.network.params());
    assert_eq!(full.history, resumed.history);
}

#[test]
fn metrics_and_events_round_trip() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("metrics.csv");
    write_metrics_csv(&csv, &t.history, 2).unwrap();
    let header = fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with(
        "epoch,loss_task,loss_reg,loss_all,test_error_pct,total_sparsity_pct,active_conv1,active_conv2\n"
    ));
    assert_eq!(read_metrics_csv(&csv).unwrap(), t.history);
    let ev = dir.path().join("events.jsonl");
    write_events(&ev, &t.events).unwrap();
    assert_eq!(read_events(&ev).unwrap(), t.events);
}
