use std::fs;
use std::path::Path;
use std::process::Command;

use ngauss::data::{encode_idx, synth_dataset, DatasetKind, LabeledDataset, Split};
use tempfile::TempDir;

fn write_mnist(dir: &Path, per_class_train: usize, per_class_test: usize) {
    for (split, n, seed, prefix) in [
        (Split::Train, per_class_train, 1, "train"),
        (Split::Test, per_class_test, 2, "t10k"),
    ] {
        let ds: LabeledDataset = synth_dataset(DatasetKind::Mnist, n, seed, split).unwrap();
        let (images, labels) = encode_idx(&ds).unwrap();
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
    }
}

fn fixture() -> (TempDir, String) {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("mnist");
    fs::create_dir(&data).unwrap();
    write_mnist(&data, 12, 3);
    let data = data.display().to_string();
    (tmp, data)
}

fn ngauss(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ngauss")).args(args).output().unwrap();
    (
        out.status.code().expect("exited normally"),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn train_writes_metrics_and_summary() {
    let (tmp, data) = fixture();
    let out = tmp.path().join("out");
    let (code, stdout, stderr) = ngauss(&[
        "train", "--dataset", "mnist", "--scheme", "SSS", "--data-dir", &data,
        "--out-dir", out.to_str().unwrap(), "--epochs", "2", "--batch-size", "16",
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("\"completed\""));

    let (header, rows) = read_csv(&out.join("metrics_mnist_SSS.csv"));
    assert_eq!(header, ["epoch", "train_loss", "test_loss", "test_accuracy", "wall_seconds"]);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.len() == 5));
    assert_eq!(rows[0][0], "1");
    for r in &rows {
        let acc: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary_mnist_SSS.json")).unwrap()).unwrap();
    assert_eq!(summary["status"]["converged"], true);
    assert_eq!(summary["status"]["reason"], "completed");
    assert_eq!(summary["epochs_run"], 2);
    assert_eq!(summary["architecture"]["num_classes"], 10);
    assert_eq!(summary["architecture"]["scheme"], "SSS");
    assert_eq!(summary["config"]["hyper"]["batch_size"], 16);
}

#[test]
fn train_is_reproducible_apart_from_timing() {
    let (tmp, data) = fixture();
    let mut bodies = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let (code, _, stderr) = ngauss(&[
            "train", "--dataset", "mnist", "--scheme", "NNS", "--data-dir", &data,
            "--out-dir", out.to_str().unwrap(), "--epochs", "2", "--seed", "7",
        ]);
        assert_eq!(code, 0, "{stderr}");
        let (_, rows) = read_csv(&out.join("metrics_mnist_NNS.csv"));
        bodies.push(rows.into_iter().map(|mut r| {
            r.truncate(4);
            r
        }).collect::<Vec<_>>());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn divergent_training_exits_three() {
    let (tmp, data) = fixture();
    let out = tmp.path().join("out");
    let (code, stdout, _) = ngauss(&[
        "train", "--dataset", "mnist", "--scheme", "RRR", "--data-dir", &data,
        "--out-dir", out.to_str().unwrap(), "--epochs", "6", "--lr", "1e6", "--momentum", "0",
    ]);
    assert_eq!(code, 3);
    assert!(stdout.contains("NaN_loss") || stdout.contains("plateau_above_threshold"), "{stdout}");
    let summary = fs::read_to_string(out.join("summary_mnist_RRR.json")).unwrap();
    assert!(summary.contains("\"converged\": false"));
}

#[test]
fn usage_errors_exit_one() {
    let (tmp, data) = fixture();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--dataset", "mnist", "--data-dir", &data, "--out-dir", out],
        vec!["train", "--dataset", "mnist", "--scheme", "XYZ", "--data-dir", &data],
        vec!["train", "--dataset", "imagenet", "--scheme", "SSS"],
        vec!["train", "--dataset", "mnist", "--scheme", "SSS", "--data-dir", &data, "--out-dir", out, "--momentum", "1.5"],
        vec!["train", "--dataset", "mnist", "--scheme", "SSS", "--data-dir", &data, "--out-dir", out, "--limit-train", "100000"],
        vec!["train", "--dataset", "mnist", "--scheme", "SSS", "--data-dir", &data, "--out-dir", out, "--batch-size", "0"],
        vec!["lipcheck", "--n", "1"],
        vec!["lipcheck", "--hi", "0.5"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let (code, _, stderr) = ngauss(&args);
        assert_eq!(code, 1, "{args:?}: {stderr}");
    }
}

#[test]
fn io_errors_exit_two() {
    let (tmp, data) = fixture();
    let missing = tmp.path().join("nope");
    let (code, _, stderr) = ngauss(&[
        "train", "--dataset", "mnist", "--scheme", "SSS", "--data-dir", missing.to_str().unwrap(),
        "--out-dir", tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("does not exist"));

    let (code, _, _) = ngauss(&["inspect", "--dataset", "mnist", "--data-dir", missing.to_str().unwrap()]);
    assert_eq!(code, 2);

    // corrupt the image magic
    let path = Path::new(&data).join("train-images-idx3-ubyte");
    let mut bytes = fs::read(&path).unwrap();
    bytes[3] = 0x01;
    fs::write(&path, bytes).unwrap();
    let (code, _, stderr) = ngauss(&["inspect", "--dataset", "mnist", "--data-dir", &data]);
    assert_eq!(code, 2);
    assert!(stderr.contains("magic"), "{stderr}");
}

#[test]
fn config_file_with_flag_overrides() {
    let (tmp, data) = fixture();
    let out = tmp.path().join("cfg_out");
    let cfg = tmp.path().join("run.json");
    let text = serde_json::json!({
        "dataset": "mnist",
        "scheme": "RRS",
        "data_dir": data,
        "output_dir": out,
        "hyper": {"epochs": 3, "batch_size": 32, "seed": 4},
        "limit_train": 60,
    });
    fs::write(&cfg, text.to_string()).unwrap();
    let (code, _, stderr) = ngauss(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "1"]);
    assert_eq!(code, 0, "{stderr}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary_mnist_RRS.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["hyper"]["epochs"], 1);
    assert_eq!(summary["config"]["hyper"]["batch_size"], 32);
    assert_eq!(summary["config"]["hyper"]["learning_rate"], 0.01);
    assert_eq!(summary["config"]["limit_train"], 60);
    assert_eq!(summary["epochs_run"], 1);

    fs::write(&cfg, r#"{"dataset": "mnist", "sceme": "RRS"}"#).unwrap();
    let (code, _, _) = ngauss(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    fs::write(&cfg, "not json").unwrap();
    let (code, _, _) = ngauss(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn grid_writes_one_row_per_cell() {
    let (tmp, data) = fixture();
    let out = tmp.path().join("grid");
    let (code, _, stderr) = ngauss(&[
        "grid", "--schemes", "SSS,RRN", "--datasets", "mnist", "--data-dir", &data,
        "--out-dir", out.to_str().unwrap(), "--epochs", "2",
    ]);
    assert_eq!(code, 0, "{stderr}");
    let (header, rows) = read_csv(&out.join("grid.csv"));
    assert_eq!(header, ["conv1", "conv2", "fc1", "dataset", "final_test_loss", "converged", "epochs_run"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..4], ["S", "S", "S", "mnist"]);
    assert_eq!(rows[1][..4], ["R", "R", "N", "mnist"]);
    for r in &rows {
        assert_eq!(r.len(), 7);
        assert_eq!(r[5] == "true", !r[4].is_empty());
        assert_eq!(r[6], "2");
    }
    assert!(out.join("metrics_mnist_SSS.csv").is_file());
    assert!(out.join("metrics_mnist_RRN.csv").is_file());
}

#[test]
fn grid_records_divergent_cells_with_empty_loss() {
    let (tmp, data) = fixture();
    let out = tmp.path().join("grid");
    let (code, _, _) = ngauss(&[
        "grid", "--schemes", "RRR", "--data-dir", &data, "--out-dir", out.to_str().unwrap(),
        "--epochs", "6", "--lr", "1e6", "--momentum", "0",
    ]);
    assert_eq!(code, 0);
    let (_, rows) = read_csv(&out.join("grid.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][4], "");
    assert_eq!(rows[0][5], "false");
}

#[test]
fn grid_continues_past_failed_cells() {
    let (tmp, data) = fixture();
    let out = tmp.path().join("grid");
    // CIFAR files are absent: that cell fails, the MNIST cell still runs
    let (code, _, _) = ngauss(&[
        "grid", "--schemes", "SSS", "--datasets", "cifar10,mnist", "--data-dir", &data,
        "--out-dir", out.to_str().unwrap(), "--epochs", "1",
    ]);
    assert_eq!(code, 2);
    let (_, rows) = read_csv(&out.join("grid.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][3], "cifar10");
    assert_eq!(rows[0][6], "0");
    assert_eq!(rows[1][5], "true");
}

#[test]
fn lipcheck_reports_both_functions() {
    let (code, stdout, _) = ngauss(&["lipcheck", "--hi", "10", "--n", "10000"]);
    assert_eq!(code, 0);
    let reports: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["function_name"], "tanh");
    assert_eq!(reports[0]["bound_satisfied"], true);
    assert_eq!(reports[0]["sample_count"], 10000);
}

#[test]
fn inspect_summarises_both_splits() {
    let (_tmp, data) = fixture();
    let (code, stdout, _) = ngauss(&["inspect", "--dataset", "mnist", "--data-dir", &data]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["train"]["count"], 120);
    assert_eq!(v["test"]["count"], 30);
    assert_eq!(v["train"]["shape"], serde_json::json!([1, 28, 28]));
    assert_eq!(v["train"]["label_histogram"], serde_json::json!(vec![12; 10]));
    let (lo, hi) = (v["train"]["pixel_min"].as_f64().unwrap(), v["train"]["pixel_max"].as_f64().unwrap());
    assert!(0.0 <= lo && lo <= hi && hi <= 1.0);
}

#[test]
fn help_exits_zero() {
    let (code, stdout, _) = ngauss(&["--help"]);
    assert_eq!(code, 0);
    for cmd in ["train", "grid", "lipcheck", "inspect"] {
        assert!(stdout.contains(cmd));
    }
}
