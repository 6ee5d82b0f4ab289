use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ercpipe"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn mini(dataset: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini").join(dataset).display().to_string()
}

fn run(work: &Path, args: &[&str]) -> Output {
    let out = bin().arg("--work-dir").arg(work).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn ingest_mini(work: &Path) {
    let mut args = vec!["ingest".to_string()];
    for (name, dir) in [("MELD", "meld"), ("IEMOCAP", "iemocap"), ("EmoryNLP", "emorynlp"), ("DailyDialog", "dailydialog"), ("MEISD", "meisd")] {
        args.push("--corpus".into());
        args.push(format!("{name}={}", mini(dir)));
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run(work, &args);
}

fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn eval_of_perfect_predictions() {
    let work = tempfile::tempdir().unwrap();
    let pred = fixture("perfect_pred.jsonl");
    let gold = fixture("gold.jsonl");
    let out = run(work.path(), &["eval", "--pred", pred.to_str().unwrap(), "--gold", gold.to_str().unwrap()]);
    let text = stdout(&out);
    assert!(text.contains("MELD  n=3  accuracy=100.00  weighted-F1=100.00"), "{text}");
    assert!(text.contains("IEMOCAP  n=2  accuracy=100.00"), "{text}");

    let json = run(work.path(), &["eval", "--pred", pred.to_str().unwrap(), "--gold", gold.to_str().unwrap(), "--json"]);
    let reports: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    for r in reports.as_array().unwrap() {
        assert_eq!(r["accuracy"], 1.0);
        assert_eq!(r["weighted_f1"], 1.0);
    }
}

#[test]
fn build_without_context() {
    let work = tempfile::tempdir().unwrap();
    ingest_mini(work.path());
    let out = work.path().join("k0.jsonl");
    run(work.path(), &["build", "--k", "0", "--split", "train", "--split", "test", "--out", out.to_str().unwrap()]);
    let records = read_jsonl(&out);
    assert_eq!(records.len(), 94);
    assert!(records.iter().all(|r| r["context"].as_array().unwrap().is_empty()));
}

#[test]
fn full_pipeline_with_stubs() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    ingest_mini(w);
    let stats = stdout(&run(w, &["stats", "--split", "train", "--json"]));
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["total"], 64);

    let media = mini("meld");
    let enriched = stdout(&run(w, &["enrich", "--stub", "Two friends talk in a cafe.", "--media-root", &media, "--json"]));
    assert!(enriched.contains("\"described\": 22") || enriched.contains("\"described\":22"), "{enriched}");

    let gold = w.join("gold.jsonl");
    run(w, &["build", "--video-descriptions"]);
    run(w, &["build", "--video-descriptions", "--split", "test", "--gold", gold.to_str().unwrap()]);
    let train = read_jsonl(&w.join("dataset/train.jsonl"));
    assert_eq!(train.len(), 64);
    assert!(train.iter().any(|r| r["video_description"] == "Two friends talk in a cafe."));

    run(w, &["train", "--batch-size", "64", "--micro-batch-size", "8", "--epochs", "50", "--lr", "0.01"]);
    let log = read_jsonl(&w.join("train/run_log.jsonl"));
    assert_eq!(log.len(), 50);
    assert!(log[49]["loss"].as_f64().unwrap() < log[0]["loss"].as_f64().unwrap());

    run(w, &["predict"]);
    let preds = w.join("predictions.jsonl");
    assert_eq!(read_jsonl(&preds).len(), 30);
    let report = stdout(&run(w, &["eval", "--pred", preds.to_str().unwrap(), "--gold", gold.to_str().unwrap(), "--json"]));
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 5);

    let table = stdout(&run(w, &["ablate", "--trainer", "recording", "--generator", "echo", "--seeds", "1,2"]));
    for title in ["No Context", "Add Video Description", "Full"] {
        assert!(table.contains(title), "{table}");
    }
    assert!(table.contains("100.00"), "{table}");
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["build", "--k", "many"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let work = tempfile::tempdir().unwrap();
    let out = bin().arg("--work-dir").arg(work.path()).arg("build").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));
}
