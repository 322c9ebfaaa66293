use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn deltaspike(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deltaspike"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_reports_valid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tx.csv");
    fs::write(
        &input,
        "tx_id,timestamp,from_wallet,to_wallet,value\n\
         0x01,2018-05-01T00:00:00Z,0xaa,0xbb,10\n\
         0x02,2018-05-01T00:03:20Z,0xbb,0xcc,20\n\
         0x03,2018-05-01T00:05:00Z,0xaa,,0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = deltaspike(&["ingest", "--input", path(&input), "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["tx_count"], 3);
    assert_eq!(summary["wallet_count"], 3);
    assert!(out_dir.join("dataset.csv").exists());
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = deltaspike(&["histogram", "--input", path(&missing), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn empty_dataset_fails_the_fit_after_writing_the_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "tx_id,timestamp,from_wallet,to_wallet,value\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = deltaspike(&["analyze", "--input", path(&input), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let hist = fs::read_to_string(out_dir.join("histogram.csv")).unwrap();
    let rows: Vec<&str> = hist.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, ["delta_minutes,count"]);
    assert!(!out_dir.join("fit.json").exists());
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = deltaspike(&[
            "synth",
            "--set",
            "humans.count=200",
            "--set",
            "burst_bots.count=40",
            "--out",
            path(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            fs::read(out_dir.join("transactions.csv")).unwrap(),
            fs::read(out_dir.join("ground_truth.csv")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn synth_summary_matches_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("synth");
    let out = deltaspike(&[
        "synth",
        "--set",
        "humans.count=200",
        "--set",
        "periodic_bots.count=2",
        "--out",
        path(&synth_dir),
        "--format",
        "jsonl",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let generated: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(generated["tx_count"].as_u64().unwrap() >= 10_000);

    let input = synth_dir.join("transactions.jsonl");
    let out = deltaspike(&[
        "ingest",
        "--input",
        path(&input),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ingested: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ingested["tx_count"], generated["tx_count"]);
    assert_eq!(ingested["wallet_count"], generated["wallet_count"]);
    assert_eq!(ingested["rows_skipped"], 0);
}

#[test]
fn window_longer_than_span_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("synth");
    let out = deltaspike(&[
        "synth",
        "--set",
        "span_days=3",
        "--set",
        "burst_bots.burst_day=1",
        "--out",
        path(&synth_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let input = synth_dir.join("transactions.csv");
    let out = deltaspike(&[
        "classify",
        "--input",
        path(&input),
        "--window-minutes",
        "20000",
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_arguments_exit_with_config_code() {
    assert_eq!(deltaspike(&["analyze", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        deltaspike(&["analyze", "--input", "x.csv", "--set", "bogus=1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        deltaspike(&["synth", "--set", "periodic_bots.period_minutes=999999999"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(deltaspike(&["--help"]).status.code(), Some(0));
}
