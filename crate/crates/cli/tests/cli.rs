use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radset::evalkit::plots::{read_histogram_csv, read_roi_counts_csv, read_training_curves_csv};
use radset::evalkit::{read_confusion_csv, read_eval_report, read_predictions_csv, EvalReport, EvidenceReport};
use radset::retrieval::{read_gap_csv, read_history, read_reward_list_csv, SelectionResult};

const SMALL: &str = "seed = 3
[gen]
subjects = 36
dims = [8, 16, 16]
[retrieval]
k = 5
p0 = 200
pool_m = 50
stage1_epochs = 2
stage1_sets = 10
stage2_epochs = 2
n_support = 9
n_query = 9
";

fn radset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radset"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = radset(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    _dir: tempfile::TempDir,
    cohort: PathBuf,
    run: PathBuf,
    config: PathBuf,
}

fn pipeline() -> Run {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let cohort = dir.path().join("cohort");
    let run = dir.path().join("run");
    let c = s(&config);
    ok(&["--config", c, "gen", "--out", s(&cohort)]);
    ok(&["--config", c, "extract", "--cohort", s(&cohort)]);
    ok(&["--config", c, "train", "--cohort", s(&cohort), "--out", s(&run)]);
    ok(&["retrieve", "--cohort", s(&cohort), "--run", s(&run)]);
    ok(&["eval", "--cohort", s(&cohort), "--run", s(&run)]);
    Run {
        _dir: dir,
        cohort,
        run,
        config,
    }
}

fn eval_report(run: &Path) -> EvalReport {
    read_eval_report(fs::File::open(run.join("eval.json")).unwrap()).unwrap()
}

fn selections(run: &Path) -> Vec<SelectionResult> {
    serde_json::from_reader(fs::File::open(run.join("selections.json")).unwrap()).unwrap()
}

#[test]
fn pipeline_is_deterministic_and_outputs_round_trip() {
    let a = pipeline();
    let b = pipeline();
    let ra = eval_report(&a.run);
    assert_eq!(ra, eval_report(&b.run));
    let sa = selections(&a.run);
    assert_eq!(sa, selections(&b.run));
    assert_eq!(sa.len(), ra.predictions.len());
    assert!(sa.iter().all(|x| x.s_star.len() == 5));

    let cm = read_confusion_csv(fs::File::open(a.run.join("eval_confusion.csv")).unwrap()).unwrap();
    assert_eq!(cm, ra.confusion);
    let preds = read_predictions_csv(fs::File::open(a.run.join("eval_predictions.csv")).unwrap()).unwrap();
    assert_eq!(preds, ra.predictions);
    let history = read_history(&a.run.join("history.jsonl")).unwrap();
    assert_eq!(history.len(), 4);

    let out = ok(&["--config", s(&a.config), "export-plots", "--run", s(&a.run)]);
    assert!(out.status.success());
    let plots = a.run.join("plots");
    let hist = read_histogram_csv(fs::File::open(plots.join("score_histogram.csv")).unwrap()).unwrap();
    for sel in &sa {
        let rows: Vec<_> = hist.iter().filter(|r| r.subject_id == sel.subject_id).collect();
        assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), 200);
        assert_eq!(rows.iter().filter(|r| r.top1 == 1).count(), 1);
    }
    let counts = read_roi_counts_csv(fs::File::open(plots.join("roi_counts.csv")).unwrap()).unwrap();
    for sel in &sa {
        let total: usize = counts
            .iter()
            .filter(|r| r.subject_id == sel.subject_id)
            .map(|r| r.count)
            .sum();
        assert_eq!(total, 5);
    }
    let curves = read_training_curves_csv(fs::File::open(plots.join("training_curves.csv")).unwrap()).unwrap();
    assert_eq!(curves.len(), 4);
}

#[test]
fn report_oracle_and_resume() {
    let r = pipeline();
    let out = ok(&[
        "report",
        "--cohort",
        s(&r.cohort),
        "--run",
        s(&r.run),
        "--subject",
        "s001",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("s001"));
    let ev: EvidenceReport =
        serde_json::from_reader(fs::File::open(r.run.join("evidence_s001.json")).unwrap()).unwrap();
    assert_eq!(ev.entries.len(), 5);
    assert_eq!(ev.roi_counts.values().sum::<usize>(), 5);
    assert_eq!(ev.roi_counts.len(), 9);

    let oracle = r.run.join("oracle");
    ok(&[
        "--config",
        s(&r.config),
        "oracle",
        "--cohort",
        s(&r.cohort),
        "--out",
        s(&oracle),
        "--subpool",
        "10",
        "--k",
        "3",
        "--draws",
        "1",
    ]);
    let gaps = read_gap_csv(fs::File::open(oracle.join("gaps.csv")).unwrap()).unwrap();
    let rewards = read_reward_list_csv(fs::File::open(oracle.join("rewards.csv")).unwrap()).unwrap();
    assert!(!gaps.is_empty());
    for g in &gaps {
        assert_eq!(g.gap, 0.0);
        let mine: Vec<_> = rewards.iter().filter(|x| x.subject_id == g.subject_id).collect();
        assert_eq!(mine.len(), 120);
        let max = mine.iter().map(|x| x.reward).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, g.r_max);
    }

    let audited = r.run.join("oracle_model");
    ok(&[
        "--config",
        s(&r.config),
        "oracle",
        "--cohort",
        s(&r.cohort),
        "--out",
        s(&audited),
        "--run",
        s(&r.run),
        "--draws",
        "1",
    ]);
    let gaps = read_gap_csv(fs::File::open(audited.join("gaps.csv")).unwrap()).unwrap();
    assert!(gaps
        .iter()
        .all(|g| g.gap >= 0.0 && (g.r_max - g.r_star - g.gap).abs() < 1e-15));

    let before = fs::read(r.run.join("history.jsonl")).unwrap();
    ok(&[
        "--config",
        s(&r.config),
        "train",
        "--cohort",
        s(&r.cohort),
        "--out",
        s(&r.run),
        "--resume",
    ]);
    assert_eq!(fs::read(r.run.join("history.jsonl")).unwrap(), before);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, SMALL).unwrap();
    let cohort = dir.path().join("c");
    ok(&[
        "--config",
        s(&config),
        "gen",
        "--out",
        s(&cohort),
        "--subjects",
        "12",
        "--dims",
        "8x8x8",
        "--classes",
        "2",
        "--seed",
        "7",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_reader(fs::File::open(cohort.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subjects"].as_array().unwrap().len(), 12);
    assert_eq!(manifest["classes"], 2);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["dims"], serde_json::json!([8, 8, 8]));
}

#[test]
fn exit_codes() {
    assert_eq!(radset(&["bogus"]).status.code(), Some(2));
    assert_eq!(radset(&["gen", "--out", "x", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(radset(&["gen", "--out", "x", "--dims", "8x8"]).status.code(), Some(2));
    let out = radset(&["eval", "--cohort", "/nonexistent/cohort", "--run", "/nonexistent/run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cohort"));
    let dir = tempfile::tempdir().unwrap();
    let out = radset(&["export-plots", "--run", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.json"));
    assert_eq!(radset(&["--help"]).status.code(), Some(0));
}
