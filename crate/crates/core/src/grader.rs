//! Output comparison, suite grades and batch grading.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FailureDetail, Grade, GradeRecord, OutputText, Problem, Submission, TestSuite};
use crate::runner::{run_suite, RunConfig, RunnerError, TestRun};

/// Stored actual output per failing test is truncated to this many bytes.
const FAILURE_SNIPPET: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonPolicy {
    Exact,
    /// Ignore trailing whitespace on each line and trailing blank lines.
    #[default]
    TrimTrailing,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{outputs} outputs supplied for a suite of {tests} tests")]
pub struct LengthMismatch {
    pub outputs: usize,
    pub tests: usize,
}

pub fn compare_output(actual: &[u8], expected: &[u8], policy: ComparisonPolicy) -> bool {
    match policy {
        ComparisonPolicy::Exact => actual == expected,
        ComparisonPolicy::TrimTrailing => normalize(actual) == normalize(expected),
    }
}

fn normalize(text: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = text
        .split(|&b| b == b'\n')
        .map(|line| line.trim_ascii_end())
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// What running a solution produced: per-test outcomes, or a compile failure.
#[derive(Debug, Clone)]
pub enum SolutionOutcome {
    Ran(Vec<TestRun>),
    CompileFailed(String),
}

pub fn grade_solution(
    submission: &str,
    outcome: &SolutionOutcome,
    suite: &TestSuite,
    policy: ComparisonPolicy,
) -> Result<GradeRecord, LengthMismatch> {
    let runs = match outcome {
        SolutionOutcome::CompileFailed(diag) => {
            return Ok(GradeRecord {
                submission: submission.to_owned(),
                suite: suite.kind,
                grade: Grade::NoCompile,
                per_test: Vec::new(),
                diagnostics: Some(diag.clone()),
                failures: Vec::new(),
                error: None,
            })
        }
        SolutionOutcome::Ran(runs) => runs,
    };
    if runs.len() != suite.tests.len() {
        return Err(LengthMismatch {
            outputs: runs.len(),
            tests: suite.tests.len(),
        });
    }
    let mut per_test = Vec::with_capacity(runs.len());
    let mut failures = Vec::new();
    for (run, test) in runs.iter().zip(&suite.tests) {
        let passed = match (&run.output, &test.expected_output) {
            (Some(actual), Some(expected)) => {
                compare_output(actual.as_bytes(), expected.as_bytes(), policy)
            }
            _ => false,
        };
        if !passed {
            failures.push(FailureDetail {
                test_index: test.index,
                actual: run.output.as_ref().map(|o| {
                    OutputText(o.as_bytes()[..o.as_bytes().len().min(FAILURE_SNIPPET)].to_vec())
                }),
                fault: run.fault.clone(),
            });
        }
        per_test.push(passed);
    }
    let grade = if per_test.iter().all(|&ok| ok) {
        Grade::Pass
    } else {
        Grade::Fail
    };
    Ok(GradeRecord {
        submission: submission.to_owned(),
        suite: suite.kind,
        grade,
        per_test,
        diagnostics: None,
        failures,
        error: None,
    })
}

/// Run and grade one solution; infrastructure errors end up in the record.
pub fn grade_one(
    submission_id: &str,
    code: &str,
    suite: &TestSuite,
    problem: &Problem,
    cfg: &RunConfig,
    policy: ComparisonPolicy,
) -> GradeRecord {
    let outcome = match run_suite(code, suite, problem, cfg) {
        Ok(runs) => SolutionOutcome::Ran(runs),
        Err(RunnerError::Compile(diag)) => SolutionOutcome::CompileFailed(diag),
        Err(other) => return errored(submission_id, suite, other.to_string()),
    };
    grade_solution(submission_id, &outcome, suite, policy)
        .unwrap_or_else(|e| errored(submission_id, suite, e.to_string()))
}

fn errored(submission: &str, suite: &TestSuite, message: String) -> GradeRecord {
    GradeRecord {
        submission: submission.to_owned(),
        suite: suite.kind,
        grade: Grade::Fail,
        per_test: vec![false; suite.tests.len()],
        diagnostics: None,
        failures: Vec::new(),
        error: Some(message),
    }
}

/// Grade every submission against `suite` on a pool of `workers` threads.
/// Records come back in submission order regardless of the worker count.
pub fn grade_batch(
    submissions: &[Submission],
    suite: &TestSuite,
    problem: &Problem,
    cfg: &RunConfig,
    policy: ComparisonPolicy,
    workers: usize,
) -> Vec<GradeRecord> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        submissions
            .par_iter()
            .map(|s| grade_one(&s.id, &s.code, suite, problem, cfg, policy))
            .collect()
    })
}

pub const GRADES_CSV_HEADER: &str = "submission,suite,grade,failed_tests";

/// Grade records as CSV: one row per record, failing test indices joined by `;`.
pub fn export_grades_csv(records: &[GradeRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GRADES_CSV_HEADER.split(',')).expect("in-memory write");
    for r in records {
        let failed: Vec<String> = r.failures.iter().map(|f| f.test_index.to_string()).collect();
        w.write_record([r.submission.as_str(), r.suite.label(), &r.grade.to_string(), &failed.join(";")])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
}
