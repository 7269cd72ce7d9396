mod common;

use std::fs;
use std::path::Path;

use serde_json::Value;
use testforge::ingest::load_bundle;
use testforge::llm::{network_attempts, FixtureStore};
use testforge::prompt::{build_detailed_statement_prompt, build_testgen_prompt, parse_detailed_statement, HarnessContract, ModelSettings};

use common::*;

fn error_json(stderr: &str) -> Value {
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {stderr:?}"));
    serde_json::from_str(line).unwrap()
}

fn run_in(root: &Path, args: &[&str]) -> Outcome {
    let config = root.join("testforge.json");
    let mut full = vec!["--config", config.to_str().unwrap()];
    full.extend_from_slice(args);
    cli(&full)
}

fn p(root: &Path, pid: &str) -> String {
    root.join(pid).display().to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli(&["grade"]).code, 2);
    assert_eq!(cli(&["no-such-command"]).code, 2);
    assert_eq!(cli(&["gen-suite", "--problem", "x", "--replay", "--record"]).code, 2);
    assert_eq!(cli(&["--help"]).code, 0);
}

#[test]
fn live_generation_without_a_key_fails_cleanly() {
    std::env::remove_var(testforge::llm::API_KEY_VAR);
    let root = scratch_fixtures();
    let o = run_in(root.path(), &["gen-suite", "--problem", &p(root.path(), "p11")]);
    assert_eq!(o.code, 1, "{}", o.stderr);
    let e = error_json(&o.stderr);
    assert_eq!(e["status"], "error");
    assert_eq!(e["stage"], "generation");
    assert_eq!(e["error"], "AuthMissing");
}

#[test]
fn config_files_cannot_carry_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"api_key": "sk-test"}"#).unwrap();
    let o = cli(&["--config", config.to_str().unwrap(), "report", "--problem", "x"]);
    assert_ne!(o.code, 0);
    assert!(o.stderr.contains("api_key"), "{}", o.stderr);
}

#[test]
fn replay_pipeline_is_idempotent_and_offline() {
    let root = scratch_fixtures();
    let first = replay_pipeline(root.path(), "p25");
    assert_eq!(first.code, 0, "{}", first.stderr);
    let bundle = fs::read(root.path().join("p25/bundle.json")).unwrap();

    let second = replay_pipeline(root.path(), "p25");
    assert_eq!(second.code, 0);
    let lines: Vec<&str> = second.stdout.lines().filter(|l| l.starts_with('[')).collect();
    assert_eq!(lines.len(), 6, "{}", second.stdout);
    assert!(lines.iter().all(|l| l.contains("skipped: up to date")), "{}", second.stdout);
    assert_eq!(fs::read(root.path().join("p25/bundle.json")).unwrap(), bundle);
    assert_eq!(network_attempts(), 0);
}

#[test]
fn missing_recording_is_a_fixture_miss_with_a_saved_transcript() {
    let root = scratch_fixtures();
    let llm = root.path().join("p11/llm");
    fs::remove_dir_all(&llm).unwrap();
    let o = replay_pipeline(root.path(), "p11");
    assert_eq!(o.code, 1);
    assert_eq!(error_json(&o.stderr)["error"], "FixtureMiss");
    let transcripts: Vec<_> = fs::read_dir(root.path().join("p11/transcripts")).unwrap().collect();
    assert_eq!(transcripts.len(), 1);
    assert_eq!(network_attempts(), 0);
}

#[test]
fn excluded_problems_are_skipped() {
    let root = scratch_fixtures();
    let o = replay_pipeline(root.path(), "p29");
    assert_eq!(o.code, 0);
    assert!(o.stdout.lines().all(|l| l.contains("excluded")), "{}", o.stdout);
}

#[test]
fn review_annotation_and_report() {
    let root = scratch_fixtures();
    assert_eq!(replay_pipeline(root.path(), "p07").code, 0);
    let dir = p(root.path(), "p07");

    let listed = run_in(root.path(), &["review", "--problem", &dir]);
    assert_eq!(listed.code, 0);
    assert!(listed.stdout.contains("2 mismatch(es) awaiting review"), "{}", listed.stdout);
    assert!(listed.stdout.contains("+a: 1"), "diff of the identical-word test:\n{}", listed.stdout);

    let bad = run_in(root.path(), &["review", "--problem", &dir, "--annotate", "p07-s0001", "--cause", "llm", "--resolve", "valid"]);
    assert_eq!(bad.code, 1);
    assert_eq!(error_json(&bad.stderr)["error"], "NotReviewable");

    let one = run_in(
        root.path(),
        &["review", "--problem", &dir, "--annotate", "p07-s0005", "--cause", "llm", "--resolve", "invalid", "--note", "no identical words"],
    );
    assert_eq!(one.code, 0, "{}", one.stderr);

    let config = root.path().join("testforge.json");
    let session = cli_with_input(
        &["--config", config.to_str().unwrap(), "review", "--problem", &dir, "--interactive", "--annotator", "ta"],
        "what\ni x membership instead of position\n",
    );
    assert_eq!(session.code, 0, "{}", session.stderr);
    assert!(session.stdout.contains("1 annotation(s) recorded"), "{}", session.stdout);
    let ledger = fs::read_to_string(root.path().join("p07/annotations.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 2);

    let report = run_in(root.path(), &["report", "--problem", &dir]);
    assert_eq!(report.code, 0, "{}", report.stderr);
    let md = report.stdout;
    assert!(md.contains("| Metric | LLM Test Suites | Instructor Test Suites |"));
    // LLM: tp 4, fp 1, fn 0, tn 4. Instructor: tp 4, fp 1, fn 0, tn 4.
    assert!(md.contains("| Accuracy | 88.8% | 88.8% |"), "{md}");
    assert!(md.contains("| Precision | 80.0% | 80.0% |"), "{md}");
    assert!(md.contains("| False Positive Rate | 20.0% | 20.0% |"), "{md}");
    assert!(md.contains("| p07 | 9 | 77.78 | 11.11 | 11.11 |"), "{md}");

    let csv = run_in(root.path(), &["report", "--problem", &dir, "--format", "csv"]);
    assert_eq!(csv.stdout, "problem,solutions,matches_pct,llm_mismatches_pct,instructor_mismatches_pct\np07,9,77.78,11.11,11.11\n");
}

#[test]
fn report_refuses_unreviewed_mismatches_unless_partial() {
    let root = scratch_fixtures();
    assert_eq!(replay_pipeline(root.path(), "p07").code, 0);
    let dir = p(root.path(), "p07");
    let strict = run_in(root.path(), &["report", "--problem", &dir]);
    assert_eq!(strict.code, 1);
    assert_eq!(error_json(&strict.stderr)["error"], "UnresolvedMismatches");
    let partial = run_in(root.path(), &["report", "--problem", &dir, "--allow-partial", "--format", "json"]);
    assert_eq!(partial.code, 0);
    let v: Value = serde_json::from_str(&partial.stdout).unwrap();
    assert_eq!(v["unresolved"], 2);
}

#[test]
fn grade_export_matches_hand_labels() {
    let root = scratch_fixtures();
    assert_eq!(replay_pipeline(root.path(), "p07").code, 0);
    let out = root.path().join("grades.csv");
    let o = run_in(root.path(), &["grade", "--problem", &p(root.path(), "p07"), "--export", out.to_str().unwrap()]);
    assert_eq!(o.code, 0);
    let text = fs::read_to_string(out).unwrap();
    let labels = labels(&root.path().join("p07"));
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let l = &labels[cols[0]];
        let want = if cols[1] == "llm" { l.llm } else { l.instructor };
        assert_eq!(cols[2], want.to_string(), "{line} ({})", l.note);
        rows += 1;
    }
    assert_eq!(rows, 20);
}

#[test]
fn ingest_rebuilds_the_fixture_problems() {
    let out = tempfile::tempdir().unwrap();
    let src = fixtures_dir().join("sources");
    let xml = src.join("quiz.xml");
    let subs = src.join("p07_submissions.csv");
    let spec = format!("p07={}", subs.display());
    let o = cli(&["ingest", "--xml", xml.to_str().unwrap(), "--submissions", &spec, "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    for pid in FIXTURE_PROBLEMS {
        let fresh = load_bundle(&out.path().join(pid)).unwrap();
        let checked_in = load_bundle(&fixtures_dir().join(pid)).unwrap();
        assert_eq!(fresh.problem, checked_in.problem, "{pid}");
    }
    assert_eq!(load_bundle(&out.path().join("p07")).unwrap().submissions.len(), 10);
    assert!(load_bundle(&out.path().join("p29")).unwrap().problem.is_excluded());
}

/// The recorded exchanges must answer exactly the prompts built today.
#[test]
fn recordings_match_the_current_prompts() {
    let model = ModelSettings::default();
    for pid in FIXTURE_PROBLEMS {
        let dir = fixtures_dir().join(pid);
        let problem = load_bundle(&dir).unwrap().problem;
        let store = FixtureStore::new(dir.join("llm"));
        let first = build_detailed_statement_prompt(&problem, &model);
        let rec = store.get(&first).unwrap().unwrap_or_else(|| panic!("{pid}: no recording for the first prompt"));
        assert_eq!(rec.request, first);
        let detailed = parse_detailed_statement(&rec.response.text).unwrap();
        let second = build_testgen_prompt(&problem, &detailed, &HarnessContract::default(), &model).unwrap();
        assert!(store.get(&second).unwrap().is_some(), "{pid}: no recording for the second prompt");
        assert_eq!(store.all().unwrap().len(), 2, "{pid}");
    }
}
