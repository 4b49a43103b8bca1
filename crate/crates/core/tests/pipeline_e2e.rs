//! End-to-end runs over the bundled fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use chrono::NaiveDate;
use serde_json::Value;

use saa_core::market::parse_returns_csv;
use saa_core::pipeline::{self, LoadedConfig, RunManifest, RunOptions, RunOutcome, StageStatus, STAGES};
use saa_core::regime::Regime;
use saa_core::Execution;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn config() -> LoadedConfig {
    LoadedConfig::load(&fixtures().join("config.toml")).unwrap()
}

fn opts() -> RunOptions {
    RunOptions {
        as_of: None,
        seed: None,
        exec: Execution::Sequential,
    }
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("e2e-{name}"));
    let _ = fs::remove_dir_all(&d);
    d
}

/// The default run, shared by the read-only tests.
fn base() -> &'static (PathBuf, RunManifest) {
    static RUN: OnceLock<(PathBuf, RunManifest)> = OnceLock::new();
    RUN.get_or_init(|| {
        let out = scratch("base");
        let m = pipeline::run_pipeline(&config(), &out, opts()).unwrap();
        (out, m)
    })
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn count_json(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count()
}

#[test]
fn run_writes_every_stage() {
    let (dir, m) = base();
    assert_eq!(m.outcome, RunOutcome::Decision);
    assert_eq!(m.outcome.exit_code(), 0);
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, STAGES);
    assert!(m
        .stages
        .iter()
        .all(|s| s.status == StageStatus::Completed && !s.digests.is_empty()));

    // 21 proposals plus the index and the sensitivity table.
    assert_eq!(count_json(&dir.join("04-pc")), 23);
    assert_eq!(count_json(&dir.join("05-review/reviews")), 42);
    assert_eq!(count_json(&dir.join("05-review/risk")), 21);
    let ens = json(&dir.join("06-cio/ensembles.json"));
    assert_eq!(ens["ensembles"].as_array().unwrap().len(), 7);
    assert!(dir.join("06-cio/board_memo.md").is_file());
    assert!(!dir.join("06-cio/escalation.json").exists());
    assert!(pipeline::verify_manifest(dir, m).unwrap().is_empty());
}

#[test]
fn manifest_round_trips() {
    let (dir, m) = base();
    let read: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(pipeline::MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(&read, m);
    assert_eq!(read.as_of, NaiveDate::from_ymd_opt(2025, 12, 31).unwrap());
    assert!(read.digest_of("06-cio", "cio_decision.json").is_some());
}

#[test]
fn replay_matches_and_detects_tampering() {
    let (dir, m) = base();
    let copy = scratch("tamper-src");
    let digests = pipeline::tree_digests(dir).unwrap();
    for rel in digests.keys().chain([&pipeline::MANIFEST_FILE.to_string()]) {
        let to = copy.join(rel);
        fs::create_dir_all(to.parent().unwrap()).unwrap();
        fs::copy(dir.join(rel), to).unwrap();
    }
    let report = pipeline::replay(
        &copy.join(pipeline::MANIFEST_FILE),
        Some(&scratch("replay")),
        Execution::Parallel,
    )
    .unwrap();
    assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
    assert_eq!(report.outcome, m.outcome);

    let target = copy.join("04-pc/gmv.json");
    let text = fs::read_to_string(&target).unwrap();
    fs::write(&target, text.replacen('0', "1", 1)).unwrap();
    assert!(pipeline::replay(
        &copy.join(pipeline::MANIFEST_FILE),
        Some(&scratch("replay2")),
        Execution::Sequential
    )
    .is_err());
}

#[test]
fn seed_override_changes_only_seeded_artifacts() {
    let (dir, _) = base();
    let out = scratch("seed");
    let m = pipeline::run_pipeline(
        &config(),
        &out,
        RunOptions {
            seed: Some(99),
            ..opts()
        },
    )
    .unwrap();
    assert_eq!(m.seeds.assignment, 99);
    let a = pipeline::tree_digests(dir).unwrap();
    let b = pipeline::tree_digests(&out).unwrap();
    for prefix in ["01-macro", "02-cma", "03-covariance"] {
        let same = a
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .all(|(k, v)| b.get(k) == Some(v));
        assert!(same, "{prefix} depends on the seed");
    }
    assert_ne!(a.get("05-review/assignments.json"), b.get("05-review/assignments.json"));
}

#[test]
fn disabled_method_is_absent_downstream() {
    let mut cfg = config();
    cfg.config.method_toggles.insert("hrp".into(), false);
    let out = scratch("toggle");
    let m = pipeline::run_pipeline(&cfg, &out, opts()).unwrap();
    assert_ne!(m.outcome, RunOutcome::Failed, "{:?}", m.stages);
    assert_eq!(m.disabled_methods, vec!["hrp".to_string()]);
    assert!(!out.join("04-pc/hrp.json").exists());
    let ens = json(&out.join("06-cio/ensembles.json"));
    for e in ens["ensembles"].as_array().unwrap() {
        let cw = e["candidate_weights"].as_object().unwrap();
        assert_eq!(cw.len(), 20);
        assert!(!cw.contains_key("hrp"));
    }
}

#[test]
fn regime_override_is_recorded() {
    let mut cfg = config();
    cfg.config.regime_override = Some(Regime::Recession);
    let out = scratch("override");
    let m = pipeline::run_pipeline(&cfg, &out, opts()).unwrap();
    assert_eq!(m.regime_override, Some(Regime::Recession));
    let view = json(&out.join("01-macro/macro-view.json"));
    assert_eq!(view["regime"], "recession");
    assert_eq!(view["overridden"], true);
    let set = json(&out.join("02-cma/cma-set.json"));
    assert_eq!(set["regime"], "recession");
}

#[test]
fn corrupt_data_fails_the_stage_and_skips_the_rest() {
    let src = fixtures();
    let dir = scratch("corrupt-src");
    fs::create_dir_all(&dir).unwrap();
    for f in ["config.toml", "fundamentals.csv", "caps.csv", "indicators.csv"] {
        fs::copy(src.join(f), dir.join(f)).unwrap();
    }
    let returns = fs::read_to_string(src.join("returns.csv")).unwrap();
    let mut lines: Vec<String> = returns.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    cells[3] = "n/a".into();
    lines[5] = cells.join(",");
    fs::write(dir.join("returns.csv"), lines.join("\n") + "\n").unwrap();

    let cfg = LoadedConfig::load(&dir.join("config.toml")).unwrap();
    let out = scratch("corrupt");
    let m = pipeline::run_pipeline(&cfg, &out, opts()).unwrap();
    assert_eq!(m.outcome, RunOutcome::Failed);
    assert_eq!(m.outcome.exit_code(), 1);
    assert_eq!(m.failed_stage.as_deref(), Some("02-cma"));
    assert_eq!(m.stages[0].status, StageStatus::Completed);
    assert_eq!(m.stages[1].status, StageStatus::Failed);
    assert!(m.stages[1].error.as_deref().unwrap().contains("returns.csv"));
    assert!(m.stages[2..].iter().all(|s| s.status == StageStatus::Skipped));
    assert!(out.join(pipeline::MANIFEST_FILE).is_file());
}

#[test]
fn missing_file_fails_validation() {
    let mut cfg = config();
    cfg.config.data.returns = vec![PathBuf::from("nope.csv")];
    assert!(cfg.validate().is_err());
    assert!(pipeline::run_pipeline(&cfg, &scratch("missing"), opts()).is_err());
}

#[test]
fn feedback_scores_a_past_run() {
    let root = scratch("history");
    let as_of = NaiveDate::from_ymd_opt(2020, 12, 31).unwrap();
    let m = pipeline::run_pipeline(
        &config(),
        &root.join("2020"),
        RunOptions {
            as_of: Some(as_of),
            ..opts()
        },
    )
    .unwrap();
    assert_ne!(m.outcome, RunOutcome::Failed);
    let past = pipeline::load_past_runs(&root).unwrap();
    assert_eq!(past.len(), 1);
    assert_eq!(past[0].as_of, as_of);
    assert_eq!(past[0].assets.len(), 18);

    let realized = parse_returns_csv(fs::File::open(fixtures().join("returns.csv")).unwrap(), "returns.csv").unwrap();
    let rec = pipeline::compute_feedback(&past, &realized, None, 12);
    assert_eq!(rec.runs.len(), 1);
    assert_eq!(rec.runs[0].months, 12);
    let ic = rec.rank_ic.unwrap();
    assert!((-1.0..=1.0).contains(&ic));
    assert!(rec.signal_hit_rate.is_some());
    assert!(rec.regime_accuracy.is_none());
    let log = pipeline::emit_change_log(&rec, &pipeline::FeedbackThresholds::default()).unwrap();
    assert!(log
        .recommendations
        .iter()
        .all(|r| !r.evidence.is_empty() && !r.action.is_empty()));
}
