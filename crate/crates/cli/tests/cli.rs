use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sparsefilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsefilter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--model", "lenet", "--dataset", "synthetic", "--epochs", "2", "--batch-size", "50",
        "--seed", "3", "--out",
    ];
    let out = out.to_str().unwrap();
    args.push(out);
    args.extend_from_slice(extra);
    sparsefilter(&args)
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn smoke_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train(&run, &["--reg", "ratio", "--lambda", "0.5", "--threshold", "0.05"]);
    assert_ok(&o);
    for f in ["checkpoint/manifest.json", "checkpoint/params.bin", "metrics.csv", "events.jsonl"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(fs::read_to_string(run.join("events.jsonl")).unwrap().lines().count(), 2);

    let eval = sparsefilter(&["eval", "--checkpoint", run.to_str().unwrap(), "--dataset", "synthetic"]);
    assert_ok(&eval);
    let err: f64 = String::from_utf8(eval.stdout).unwrap().trim().parse().unwrap();
    let last = metrics.lines().last().unwrap().split(',').nth(4).unwrap().parse::<f64>().unwrap();
    assert!((err - last).abs() < 0.005, "{err} vs {last}");

    let csv = dir.path().join("report.csv");
    let report = sparsefilter(&["report", run.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_ok(&report);
    let table = String::from_utf8(report.stdout).unwrap();
    assert!(table.contains("l1/l2"), "{table}");
    assert!(csv.exists());

    let pgm = dir.path().join("conv1.pgm");
    assert_ok(&sparsefilter(&[
        "dump-filters", "--checkpoint", run.to_str().unwrap(), "--layer", "1", "--out", pgm.to_str().unwrap(),
    ]));
    assert!(fs::read(&pgm).unwrap().starts_with(b"P5\n31 25\n255\n"));

    let small = dir.path().join("small");
    assert_ok(&sparsefilter(&[
        "export-pruned", "--checkpoint", run.to_str().unwrap(), "--out", small.to_str().unwrap(),
    ]));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(small.join("manifest.json")).unwrap()).unwrap();
    let active: Vec<u64> = manifest["mask"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_array().unwrap().len() as u64)
        .collect();
    assert_eq!(manifest["tensors"][0]["shape"][0].as_u64().unwrap(), active[0]);
    let eval_small = sparsefilter(&["eval", "--checkpoint", small.to_str().unwrap(), "--dataset", "synthetic"]);
    assert_ok(&eval_small);
    assert_eq!(
        String::from_utf8(eval_small.stdout).unwrap().trim().parse::<f64>().unwrap(),
        err
    );

    let sweep = dir.path().join("sweep.csv");
    assert_ok(&sparsefilter(&[
        "sweep", "--checkpoint", run.to_str().unwrap(), "--layer", "1", "--dataset", "synthetic",
        "--out", sweep.to_str().unwrap(),
    ]));
    let rows: Vec<String> = fs::read_to_string(&sweep).unwrap().lines().map(String::from).collect();
    assert_eq!(rows[0], "removed_count,error_pct");
    assert_eq!(rows.len(), 1 + 21);
    let row0: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((row0 - err).abs() < 0.005);
    for (i, r) in rows[1..].iter().enumerate() {
        assert_eq!(r.split(',').next().unwrap(), i.to_string());
    }
}

#[test]
fn zero_lambda_matches_no_regularizer() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("none"), dir.path().join("ratio0"));
    assert_ok(&train(&a, &["--reg", "none"]));
    assert_ok(&train(&b, &["--reg", "ratio", "--lambda", "0"]));
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("checkpoint/params.bin")).unwrap(),
        fs::read(b.join("checkpoint/params.bin")).unwrap()
    );
}

#[test]
fn missing_data_dir_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparsefilter(&["train", "--dataset", "mnist", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("--data-dir") && stderr.contains("Usage"), "{stderr}");
}

#[test]
fn unreadable_data_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparsefilter(&[
        "train", "--dataset", "mnist", "--data-dir", dir.path().join("absent").to_str().unwrap(),
        "--out", dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn bad_flags_fail_with_usage() {
    let o = sparsefilter(&["train", "--dataset", "synthetic", "--reg", "l3", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values"));
    let o = sparsefilter(&["report"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn report_rejects_unreadable_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparsefilter(&["report", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}
