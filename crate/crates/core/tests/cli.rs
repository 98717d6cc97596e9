use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixedobj::checkpoint::Checkpoint;
use mixedobj::cli::synth_test_seed;
use mixedobj::corpus::{generate_synthetic, load_dataset, Preprocessing, SyntheticSpec};
use mixedobj::trainer::MetricsRecord;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixedobj"))
        .args(args)
        .output()
        .expect("spawn mixedobj")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .find(|l| l.starts_with("error[code="))
        .unwrap_or_default()
        .to_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", s(dir), "--seed", "3", "--labeled", "40", "--unlabeled", "30", "--test", "30", "--vocab-size", "60", "--min-len", "3", "--max-len", "8"];
    args.extend_from_slice(extra);
    let out = bin(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train_args<'a>(data: &'a Path, out: &'a Path, epochs: &'a str) -> Vec<String> {
    [
        "train", "--out", s(out), "--labeled", &format!("{}/train.tsv", s(data)), "--unlabeled",
        &format!("{}/unlabeled.txt", s(data)), "--dev", &format!("{}/test.tsv", s(data)), "--test",
        &format!("{}/test.tsv", s(data)), "--objective", "mixed", "--epsilon", "0.1", "--epochs", epochs,
        "--token-budget", "60", "--embed-dim", "6", "--hidden", "5", "--vocab-size", "100", "--learning-rate", "0.01",
        "--seed", "9",
    ]
    .iter()
    .map(|a| a.to_string())
    .collect()
}

fn run_train(args: &[String]) -> Output {
    bin(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn metrics(dir: &Path) -> Vec<MetricsRecord> {
    std::fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_round_trips_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &[]);
    synth(&b, &[]);
    for f in ["train.tsv", "unlabeled.txt", "test.tsv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let spec = SyntheticSpec {
        labeled: 40,
        unlabeled: 30,
        vocab_size: 60,
        min_len: 3,
        max_len: 8,
        ..SyntheticSpec::default()
    };
    let expected = generate_synthetic(3, &spec).unwrap();
    let loaded = load_dataset(&a.join("train.tsv"), Some(&a.join("unlabeled.txt")), 2, Preprocessing::Standard).unwrap();
    assert_eq!(loaded, expected);
    let test = generate_synthetic(synth_test_seed(3), &SyntheticSpec { labeled: 30, unlabeled: 0, ..spec }).unwrap();
    let loaded_test = load_dataset(&a.join("test.tsv"), None, 2, Preprocessing::Standard).unwrap();
    assert_eq!(loaded_test.labeled(), test.labeled());

    let c = tmp.path().join("c");
    let out = bin(&["synth", "--out", s(&c), "--labeled", "5"]);
    assert!(out.status.success());
    assert!(c.join("train.tsv").exists());
    assert!(!c.join("unlabeled.txt").exists());
}

#[test]
fn train_writes_run_directory_and_evaluate_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let run = tmp.path().join("run");
    let out = run_train(&train_args(&data, &run, "3"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "metrics.jsonl", "vocab.tsv", "report.json", "checkpoints/best.json", "checkpoints/last.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["train"]["max_epochs"], 3);
    assert_eq!(config["train"]["objective"]["lambda_vat"], 1.0);

    let best_dev = metrics(&run)
        .iter()
        .filter_map(|r| match r {
            MetricsRecord::Epoch(e) => e.best_dev_error,
            _ => None,
        })
        .next_back()
        .unwrap();
    let eval_out = tmp.path().join("eval.json");
    let out = bin(&[
        "evaluate", "--checkpoint", s(&run.join("checkpoints/best.json")), "--data", s(&data.join("test.tsv")), "--out", s(&eval_out),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["error_rate"].as_f64().unwrap(), best_dev);
    assert_eq!(std::fs::read(&eval_out).unwrap(), out.stdout);

    let out = bin(&["analyze", "neighbors", "--checkpoint", s(&run.join("checkpoints/best.json")), "--word", "w1", "--k", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let nn: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(nn["neighbors"].as_array().unwrap().len(), 3);

    let out = bin(&[
        "analyze", "histogram", "--checkpoint", s(&run.join("checkpoints/best.json")), "--data", s(&data.join("test.tsv")),
    ]);
    assert!(out.status.success());
    let h: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total: u64 = ["correct", "incorrect"]
        .iter()
        .flat_map(|k| h[k].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()))
        .sum();
    assert_eq!(total, 30);

    let ck = s(&run.join("checkpoints/best.json")).to_owned();
    let vocab = s(&run.join("vocab.tsv")).to_owned();
    let out = bin(&[
        "analyze", "ensemble", "--ml", &ck, "--at", &ck, "--vat", &ck, "--em", &ck, "--vocab", &vocab, "--data", s(&data.join("test.tsv")),
        "--grid-step", "0.25",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(e["candidates"], 35);
    assert_eq!(e["error_rate"].as_f64().unwrap(), best_dev);
}

#[test]
fn same_seed_gives_identical_metrics_and_resume_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run_train(&train_args(&data, &a, "4")).status.success());
    assert!(run_train(&train_args(&data, &b, "4")).status.success());
    let ma = std::fs::read(a.join("metrics.jsonl")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.jsonl")).unwrap());

    assert!(run_train(&train_args(&data, &c, "2")).status.success());
    let out = bin(&["train", "--out", s(&c), "--resume", "--epochs", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(ma, std::fs::read(c.join("metrics.jsonl")).unwrap());
    let last = |d: &PathBuf| Checkpoint::<f64>::load(&d.join("checkpoints/last.json")).unwrap().tensors;
    assert_eq!(last(&a), last(&c));
}

#[test]
fn error_paths_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);

    // configuration
    let mut args = train_args(&data, &tmp.path().join("r1"), "1");
    args.extend(["--dropout".into(), "1.5".into()]);
    let out = run_train(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[code=2 kind=config]: "), "{}", error_line(&out));
    assert!(error_line(&out).contains("dropout"));

    let out = bin(&["train", "--out", "x", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    let out = bin(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[code=2 kind=usage]: "));

    // data
    let mut args = train_args(&data, &tmp.path().join("r2"), "1");
    args[4] = s(&tmp.path().join("missing.tsv")).to_owned();
    let out = run_train(&args);
    assert_eq!(out.status.code(), Some(3), "{}", error_line(&out));
    assert!(error_line(&out).contains("missing.tsv"));

    // checkpoint
    let missing = tmp.path().join("nowhere/best.json");
    let out = bin(&["evaluate", "--checkpoint", s(&missing), "--data", s(&data.join("test.tsv"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(error_line(&out).starts_with("error[code=4 kind=checkpoint]: "));
    assert!(error_line(&out).contains(s(&missing)));

    // empty split and vocabulary mismatch against a real checkpoint
    let run = tmp.path().join("run");
    assert!(run_train(&train_args(&data, &run, "1")).status.success());
    let empty = tmp.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let ck = run.join("checkpoints/last.json");
    let out = bin(&["evaluate", "--checkpoint", s(&ck), "--data", s(&empty)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error[code=3 kind=contract]: "));

    let other_vocab = tmp.path().join("vocab.tsv");
    std::fs::write(&other_vocab, std::fs::read_to_string(run.join("vocab.tsv")).unwrap().replacen("w", "v", 1)).unwrap();
    let out = bin(&["evaluate", "--checkpoint", s(&ck), "--vocab", s(&other_vocab), "--data", s(&data.join("test.tsv"))]);
    assert_eq!(out.status.code(), Some(4), "{}", error_line(&out));
    assert!(error_line(&out).contains("hash"));
}

#[test]
fn ablate_lists_grids_without_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["ablate", "--grid", "table5", "--dry-run", "--out", s(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert_eq!(std::fs::read_to_string(tmp.path().join("grid.csv")).unwrap(), csv);

    let out = bin(&["ablate", "--grid", "table7", "--dry-run"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 11);

    let out = bin(&["ablate", "--grid", "axis", "--axis", "hidden", "--dry-run"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);

    let out = bin(&["ablate", "--grid", "axis", "--dry-run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_runs_an_axis_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let sweep_dir = tmp.path().join("sweep");
    let out = Command::new(env!("CARGO_BIN_EXE_mixedobj"))
        .env("MIXEDOBJ_THREADS", "2")
        .args([
            "ablate", "--grid", "axis", "--axis", "labeled-count", "--values", "10,40", "--labeled",
            &format!("{}/train.tsv", s(&data)), "--test", &format!("{}/test.tsv", s(&data)), "--objective", "ml", "--epochs", "2",
            "--token-budget", "60", "--embed-dim", "4", "--hidden", "4", "--out", s(&sweep_dir),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(sweep_dir.join("sweep.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["labeled_count"], 10);
    assert!(rows.iter().all(|r| r["error_rate"].as_f64().is_some_and(|e| (0.0..=1.0).contains(&e))));

    let out = Command::new(env!("CARGO_BIN_EXE_mixedobj"))
        .env("MIXEDOBJ_THREADS", "zero")
        .args(["ablate", "--grid", "axis", "--axis", "layers", "--values", "1", "--labeled", &format!("{}/train.tsv", s(&data))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
