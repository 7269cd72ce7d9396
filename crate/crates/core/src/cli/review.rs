//! Terminal review of mismatches: listing with diffs, one-shot and
//! interactive annotation.

use std::io::{BufRead, Write};
use std::path::Path;

use chrono::Utc;
use similar::TextDiff;

use super::stages::ledger_for;
use super::CliError;
use crate::evaluator::{LedgerEntry, MismatchCause, QuadrantRecord, Resolved};
use crate::ingest::Bundle;
use crate::model::{Grade, SuiteKind};

const STAGE: &str = "review";
const MAX_FAILURES_SHOWN: usize = 5;
const MAX_PAYLOAD_LINES: usize = 20;

pub fn pending(b: &Bundle) -> Result<Vec<&QuadrantRecord>, CliError> {
    let records = b
        .evaluation
        .as_ref()
        .ok_or_else(|| CliError::new(STAGE, "MissingEvaluation", "no evaluation in the bundle; run `evaluate` first"))?;
    Ok(records.iter().filter(|r| r.needs_review()).collect())
}

/// Everything a reviewer needs to judge one mismatch.
pub fn describe_record(b: &Bundle, r: &QuadrantRecord) -> String {
    let mut s = format!(
        "{}  LLM suite: {}  instructor suite: {}\n",
        r.record_ref(),
        r.llm_grade,
        r.instructor_grade
    );
    for kind in [SuiteKind::Llm, SuiteKind::Instructor] {
        let grade = match kind {
            SuiteKind::Llm => r.llm_grade,
            SuiteKind::Instructor => r.instructor_grade,
        };
        if grade != Grade::Fail {
            continue;
        }
        let Some(record) = b.grades.get(&kind).and_then(|g| g.iter().find(|g| g.submission == r.submission)) else {
            continue;
        };
        let suite = b.suite(kind);
        s.push_str(&format!("  failing {kind}-suite tests: {}\n", record.failures.len()));
        for f in record.failures.iter().take(MAX_FAILURES_SHOWN) {
            let test = suite.and_then(|su| su.tests.iter().find(|t| t.index == f.test_index));
            s.push_str(&format!("  - test {}", f.test_index));
            if let Some(t) = test {
                s.push_str(&format!(" ({:?})", t.origin));
            }
            if let Some(fault) = &f.fault {
                s.push_str(&format!(", {fault}"));
            }
            s.push('\n');
            if let Some(t) = test {
                s.push_str("    input:\n");
                for line in t.payload.text().lines().take(MAX_PAYLOAD_LINES) {
                    s.push_str(&format!("      {line}\n"));
                }
                let expected = t.expected_output.as_ref().map(|o| o.to_display()).unwrap_or_default();
                let actual = f.actual.as_ref().map(|o| o.to_display()).unwrap_or_default();
                let diff = TextDiff::from_lines(&expected, &actual);
                s.push_str("    diff:\n");
                for line in diff.unified_diff().context_radius(2).header("expected", "actual").to_string().lines() {
                    s.push_str(&format!("      {line}\n"));
                }
            }
        }
    }
    s
}

pub fn list(b: &Bundle, out: &mut dyn Write) -> Result<usize, CliError> {
    let records = pending(b)?;
    for r in &records {
        let _ = writeln!(out, "{}", describe_record(b, r));
    }
    let _ = writeln!(out, "{} mismatch(es) awaiting review", records.len());
    Ok(records.len())
}

pub fn parse_cause(text: &str) -> Option<MismatchCause> {
    match text.trim().to_ascii_lowercase().as_str() {
        "l" | "llm" => Some(MismatchCause::LlmMismatch),
        "i" | "instructor" => Some(MismatchCause::InstructorMismatch),
        "o" | "other" => Some(MismatchCause::OtherMismatch),
        _ => None,
    }
}

pub fn parse_resolved(text: &str) -> Option<Resolved> {
    match text.trim().to_ascii_lowercase().as_str() {
        "v" | "valid" => Some(Resolved::Valid),
        "x" | "invalid" => Some(Resolved::Invalid),
        _ => None,
    }
}

/// Validate against the bundle's evaluation, then append to the ledger.
pub fn annotate(
    b: &Bundle,
    dir: &Path,
    record: &str,
    cause: MismatchCause,
    resolved: Resolved,
    note: &str,
    annotator: &str,
) -> Result<(), CliError> {
    let records = b
        .evaluation
        .as_ref()
        .ok_or_else(|| CliError::new(STAGE, "MissingEvaluation", "no evaluation in the bundle; run `evaluate` first"))?;
    // Accept a bare submission id as well as `problem/submission`.
    let full = if record.contains('/') { record.to_owned() } else { format!("{}/{record}", b.problem.id) };
    let r = records
        .iter()
        .find(|r| r.record_ref() == full)
        .ok_or_else(|| CliError::new(STAGE, "UnknownRecord", format!("no record {full}")))?;
    if !r.quadrant.is_mismatch() {
        return Err(CliError::new(STAGE, "NotReviewable", format!("{full} is not a mismatch")));
    }
    let entry = LedgerEntry {
        record: full,
        cause,
        resolved_validity: resolved,
        note: note.to_owned(),
        timestamp: Utc::now(),
        annotator: annotator.to_owned(),
    };
    ledger_for(dir).append(&entry).map_err(|e| CliError::from_error(STAGE, &e))
}

/// Walk the pending mismatches, reading one answer line per record:
/// `<cause> <validity> [note]`, `s` to skip or `q` to stop.
pub fn interactive(
    b: &Bundle,
    dir: &Path,
    annotator: &str,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<usize, CliError> {
    let refs: Vec<String> = pending(b)?.iter().map(|r| r.record_ref()).collect();
    let mut done = 0;
    'records: for (i, reference) in refs.iter().enumerate() {
        let r = b.evaluation.as_ref().and_then(|e| e.iter().find(|r| &r.record_ref() == reference)).expect("pending record");
        let _ = writeln!(out, "[{}/{}] {}", i + 1, refs.len(), describe_record(b, r));
        loop {
            let _ = write!(out, "cause (l/i/o) validity (v/x) [note], s=skip, q=quit> ");
            let _ = out.flush();
            let mut line = String::new();
            let read = input.read_line(&mut line).map_err(|e| CliError::from_error(STAGE, &e))?;
            let line = line.trim();
            if read == 0 || line == "q" {
                let _ = writeln!(out);
                break 'records;
            }
            if line == "s" {
                continue 'records;
            }
            let mut parts = line.splitn(3, char::is_whitespace);
            let cause = parts.next().and_then(parse_cause);
            let resolved = parts.next().and_then(parse_resolved);
            let note = parts.next().unwrap_or("").trim();
            match (cause, resolved) {
                (Some(c), Some(v)) => {
                    annotate(b, dir, reference, c, v, note, annotator)?;
                    done += 1;
                    continue 'records;
                }
                _ => {
                    let _ = writeln!(out, "could not read that; example: `i x regenerated output differs`");
                }
            }
        }
    }
    let _ = writeln!(out, "{done} annotation(s) recorded");
    Ok(done)
}
