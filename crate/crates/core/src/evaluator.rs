//! Differential evaluation of the two suites: quadrants, validity, review
//! annotations, confusion matrices, metrics and per-problem tables.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Grade;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("grade {0} is not one of 1, 0, -1")]
    InvalidGrade(i8),
    #[error("validity is only decided for compiling solutions (got {llm}, {instructor})")]
    NoCompile { llm: i8, instructor: i8 },
    #[error("record {0} is not a mismatch and cannot be annotated")]
    NotReviewable(String),
    #[error("no record {0} in this evaluation")]
    UnknownRecord(String),
    #[error("{0} mismatch(es) have not been reviewed")]
    UnresolvedMismatches(usize),
    #[error("{0} is undefined: its denominator is zero")]
    UndefinedMetric(&'static str),
    #[error("annotation ledger line {line}: {message}")]
    Ledger { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn parse_grade(value: i8) -> Result<Grade, EvalError> {
    Grade::try_from(value).map_err(|_| EvalError::InvalidGrade(value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    BothValid,
    BothInvalid,
    LlmValidInstrInvalid,
    LlmInvalidInstrValid,
    ExcludedNoCompile,
}

impl Quadrant {
    pub fn is_mismatch(self) -> bool {
        matches!(self, Quadrant::LlmValidInstrInvalid | Quadrant::LlmInvalidInstrValid)
    }
}

pub fn quadrant(llm: Grade, instructor: Grade) -> Quadrant {
    match (llm, instructor) {
        (Grade::NoCompile, _) | (_, Grade::NoCompile) => Quadrant::ExcludedNoCompile,
        (Grade::Pass, Grade::Pass) => Quadrant::BothValid,
        (Grade::Fail, Grade::Fail) => Quadrant::BothInvalid,
        (Grade::Pass, Grade::Fail) => Quadrant::LlmValidInstrInvalid,
        (Grade::Fail, Grade::Pass) => Quadrant::LlmInvalidInstrValid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Valid,
    Invalid,
    NeedsReview,
}

/// Outcome a reviewer assigns to a mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolved {
    Valid,
    Invalid,
}

impl From<Resolved> for Validity {
    fn from(r: Resolved) -> Self {
        match r {
            Resolved::Valid => Validity::Valid,
            Resolved::Invalid => Validity::Invalid,
        }
    }
}

pub fn decide_validity(llm: Grade, instructor: Grade) -> Result<Validity, EvalError> {
    match (llm, instructor) {
        (Grade::Pass, Grade::Pass) => Ok(Validity::Valid),
        (Grade::Fail, Grade::Fail) => Ok(Validity::Invalid),
        (Grade::NoCompile, _) | (_, Grade::NoCompile) => Err(EvalError::NoCompile {
            llm: llm.value(),
            instructor: instructor.value(),
        }),
        _ => Ok(Validity::NeedsReview),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchCause {
    LlmMismatch,
    InstructorMismatch,
    OtherMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub cause: MismatchCause,
    pub resolved_validity: Resolved,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantRecord {
    pub problem_id: String,
    pub submission: String,
    pub llm_grade: Grade,
    pub instructor_grade: Grade,
    pub quadrant: Quadrant,
    /// `None` for solutions that do not compile.
    pub validity: Option<Validity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Annotation>,
}

impl QuadrantRecord {
    pub fn new(problem_id: &str, submission: &str, llm_grade: Grade, instructor_grade: Grade) -> Self {
        QuadrantRecord {
            problem_id: problem_id.to_owned(),
            submission: submission.to_owned(),
            llm_grade,
            instructor_grade,
            quadrant: quadrant(llm_grade, instructor_grade),
            validity: decide_validity(llm_grade, instructor_grade).ok(),
            annotation: None,
        }
    }

    pub fn record_ref(&self) -> String {
        format!("{}/{}", self.problem_id, self.submission)
    }

    pub fn needs_review(&self) -> bool {
        self.validity == Some(Validity::NeedsReview)
    }

    pub fn is_other(&self) -> bool {
        self.annotation.as_ref().is_some_and(|a| a.cause == MismatchCause::OtherMismatch)
    }
}

/// Store a review decision on a mismatch record. A later annotation replaces
/// an earlier one.
pub fn annotate(record: &mut QuadrantRecord, annotation: Annotation) -> Result<(), EvalError> {
    if !record.quadrant.is_mismatch() {
        return Err(EvalError::NotReviewable(record.record_ref()));
    }
    record.validity = Some(annotation.resolved_validity.into());
    record.annotation = Some(annotation);
    Ok(())
}

/// One line of the append-only annotation ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub record: String,
    pub cause: MismatchCause,
    pub resolved_validity: Resolved,
    #[serde(default)]
    pub note: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub annotator: String,
}

impl LedgerEntry {
    pub fn annotation(&self) -> Annotation {
        Annotation {
            cause: self.cause,
            resolved_validity: self.resolved_validity,
            note: self.note.clone(),
            annotator: self.annotator.clone(),
            timestamp: self.timestamp,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotationLedger {
    path: PathBuf,
}

impl AnnotationLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        AnnotationLedger { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &LedgerEntry) -> Result<(), EvalError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut line = serde_json::to_string(entry).map_err(io::Error::from)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn load(&self) -> Result<Vec<LedgerEntry>, EvalError> {
        let f = match fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut entries = Vec::new();
        for (i, line) in io::BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| EvalError::Ledger {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(entries)
    }
}

/// Replay ledger entries in order onto `records`. Entries whose record is no
/// longer a mismatch are returned as stale instead of failing.
pub fn apply_ledger(records: &mut [QuadrantRecord], entries: &[LedgerEntry]) -> Result<Vec<String>, EvalError> {
    let index: BTreeMap<String, usize> = records.iter().enumerate().map(|(i, r)| (r.record_ref(), i)).collect();
    let mut stale = Vec::new();
    for e in entries {
        let Some(&i) = index.get(&e.record) else {
            stale.push(format!("{}: no such record", e.record));
            continue;
        };
        match annotate(&mut records[i], e.annotation()) {
            Ok(()) => {}
            Err(EvalError::NotReviewable(r)) => stale.push(format!("{r}: no longer a mismatch")),
            Err(other) => return Err(other),
        }
    }
    Ok(stale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    LlmSuite,
    InstructorSuite,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Ground truth of an included record, or `None` if it is still unreviewed.
fn actual_validity(r: &QuadrantRecord) -> Option<Resolved> {
    match r.validity? {
        Validity::Valid => Some(Resolved::Valid),
        Validity::Invalid => Some(Resolved::Invalid),
        Validity::NeedsReview => None,
    }
}

/// Build the matrix for one suite. Non-compiling and Other-mismatch records
/// are left out. With `allow_partial`, unreviewed mismatches are skipped.
pub fn confusion_matrix(
    records: &[QuadrantRecord],
    subject: Subject,
    allow_partial: bool,
) -> Result<ConfusionMatrix, EvalError> {
    let unresolved = records.iter().filter(|r| r.needs_review()).count();
    if unresolved > 0 && !allow_partial {
        return Err(EvalError::UnresolvedMismatches(unresolved));
    }
    let mut m = ConfusionMatrix::default();
    for r in records {
        if r.quadrant == Quadrant::ExcludedNoCompile || r.is_other() {
            continue;
        }
        let Some(actual) = actual_validity(r) else {
            continue;
        };
        let grade = match subject {
            Subject::LlmSuite => r.llm_grade,
            Subject::InstructorSuite => r.instructor_grade,
        };
        match (grade == Grade::Pass, actual) {
            (true, Resolved::Valid) => m.tp += 1,
            (true, Resolved::Invalid) => m.fp += 1,
            (false, Resolved::Valid) => m.fn_ += 1,
            (false, Resolved::Invalid) => m.tn += 1,
        }
    }
    Ok(m)
}

/// An exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den != 0).then_some(Ratio { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Percentage truncated (not rounded) to `decimals` places.
    pub fn percent_truncated(&self, decimals: u32) -> String {
        let scale = 10u128.pow(decimals);
        let scaled = self.num as u128 * 100 * scale / self.den as u128;
        fixed(scaled, decimals)
    }

    /// Percentage rounded half-up to `decimals` places.
    pub fn percent_rounded(&self, decimals: u32) -> String {
        let scale = 10u128.pow(decimals);
        let scaled = (self.num as u128 * 200 * scale + self.den as u128) / (2 * self.den as u128);
        fixed(scaled, decimals)
    }

    fn cmp_value(&self, other: &Ratio) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

fn fixed(scaled: u128, decimals: u32) -> String {
    if decimals == 0 {
        return scaled.to_string();
    }
    let scale = 10u128.pow(decimals);
    format!("{}.{:0width$}", scaled / scale, scaled % scale, width = decimals as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub false_positive_rate: Ratio,
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "false_positive_rate"];

impl Metrics {
    pub fn get(&self, name: &str) -> Option<Ratio> {
        match name {
            "accuracy" => Some(self.accuracy),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "false_positive_rate" => Some(self.false_positive_rate),
            _ => None,
        }
    }
}

fn metric_ratios(m: &ConfusionMatrix) -> [(&'static str, Option<Ratio>); 4] {
    [
        ("accuracy", Ratio::new(m.tp + m.tn, m.n())),
        ("precision", Ratio::new(m.tp, m.tp + m.fp)),
        ("recall", Ratio::new(m.tp, m.tp + m.fn_)),
        ("false_positive_rate", Ratio::new(m.fp, m.fp + m.tn)),
    ]
}

pub fn metrics(m: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let [a, p, r, f] = metric_ratios(m).map(|(name, ratio)| ratio.ok_or(EvalError::UndefinedMetric(name)));
    Ok(Metrics { accuracy: a?, precision: p?, recall: r?, false_positive_rate: f? })
}

/// A metric as reported: exact ratio plus both display forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub ratio: Option<Ratio>,
    /// Percent, truncated to one decimal.
    pub display: Option<String>,
    /// Percent, rounded to one decimal.
    pub rounded: Option<String>,
}

pub fn metric_values(m: &ConfusionMatrix) -> Vec<MetricValue> {
    metric_ratios(m)
        .into_iter()
        .map(|(name, ratio)| MetricValue {
            name: name.to_owned(),
            ratio,
            display: ratio.map(|r| r.percent_truncated(1)),
            rounded: ratio.map(|r| r.percent_rounded(1)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directional {
    /// LLM suite: valid, instructor suite: invalid.
    pub llm_valid: u64,
    /// LLM suite: invalid, instructor suite: valid.
    pub llm_invalid: u64,
}

impl Directional {
    fn add(&mut self, q: Quadrant) {
        match q {
            Quadrant::LlmValidInstrInvalid => self.llm_valid += 1,
            Quadrant::LlmInvalidInstrValid => self.llm_invalid += 1,
            _ => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.llm_valid + self.llm_invalid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRow {
    pub problem_id: String,
    /// Compiling solutions, Other mismatches included.
    pub solutions: u64,
    pub no_compile: u64,
    pub both_valid: u64,
    pub both_invalid: u64,
    pub llm_mismatch: Directional,
    pub instructor_mismatch: Directional,
    pub other_mismatch: Directional,
    pub unresolved: u64,
    /// Compiling solutions excluding Other mismatches.
    pub n: u64,
    pub match_pct: String,
    pub llm_mismatch_pct: String,
    pub instructor_mismatch_pct: String,
}

impl ProblemRow {
    pub fn matches(&self) -> u64 {
        self.both_valid + self.both_invalid
    }
}

/// One row per problem with at least one counted record, sorted by match
/// percentage (descending), then by size (descending).
pub fn per_problem_report(records: &[QuadrantRecord], allow_partial: bool) -> Result<Vec<ProblemRow>, EvalError> {
    let unresolved = records.iter().filter(|r| r.needs_review()).count();
    if unresolved > 0 && !allow_partial {
        return Err(EvalError::UnresolvedMismatches(unresolved));
    }
    let mut groups: BTreeMap<&str, Vec<&QuadrantRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.problem_id.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (problem_id, group) in groups {
        let mut row = ProblemRow {
            problem_id: problem_id.to_owned(),
            solutions: 0,
            no_compile: 0,
            both_valid: 0,
            both_invalid: 0,
            llm_mismatch: Directional::default(),
            instructor_mismatch: Directional::default(),
            other_mismatch: Directional::default(),
            unresolved: 0,
            n: 0,
            match_pct: String::new(),
            llm_mismatch_pct: String::new(),
            instructor_mismatch_pct: String::new(),
        };
        for r in group {
            if r.quadrant == Quadrant::ExcludedNoCompile {
                row.no_compile += 1;
                continue;
            }
            row.solutions += 1;
            match r.quadrant {
                Quadrant::BothValid => row.both_valid += 1,
                Quadrant::BothInvalid => row.both_invalid += 1,
                q => match r.annotation.as_ref().map(|a| a.cause) {
                    Some(MismatchCause::LlmMismatch) => row.llm_mismatch.add(q),
                    Some(MismatchCause::InstructorMismatch) => row.instructor_mismatch.add(q),
                    Some(MismatchCause::OtherMismatch) => row.other_mismatch.add(q),
                    None => row.unresolved += 1,
                },
            }
        }
        row.n = row.matches() + row.llm_mismatch.total() + row.instructor_mismatch.total();
        let Some(matches) = Ratio::new(row.matches(), row.n) else {
            log::warn!("problem {problem_id} has no counted solutions; row omitted");
            continue;
        };
        row.match_pct = matches.percent_rounded(2);
        row.llm_mismatch_pct = Ratio { num: row.llm_mismatch.total(), den: row.n }.percent_rounded(2);
        row.instructor_mismatch_pct = Ratio { num: row.instructor_mismatch.total(), den: row.n }.percent_rounded(2);
        rows.push(row);
    }
    rows.sort_by(|a, b| {
        let ra = Ratio { num: a.matches(), den: a.n };
        let rb = Ratio { num: b.matches(), den: b.n };
        rb.cmp_value(&ra).then(b.n.cmp(&a.n)).then_with(|| a.problem_id.cmp(&b.problem_id))
    });
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub both_valid: u64,
    pub both_invalid: u64,
    pub llm_valid_instr_invalid: u64,
    pub llm_invalid_instr_valid: u64,
    pub excluded_no_compile: u64,
}

impl QuadrantCounts {
    pub fn tally(records: &[QuadrantRecord]) -> Self {
        let mut c = QuadrantCounts::default();
        for r in records {
            match r.quadrant {
                Quadrant::BothValid => c.both_valid += 1,
                Quadrant::BothInvalid => c.both_invalid += 1,
                Quadrant::LlmValidInstrInvalid => c.llm_valid_instr_invalid += 1,
                Quadrant::LlmInvalidInstrValid => c.llm_invalid_instr_valid += 1,
                Quadrant::ExcludedNoCompile => c.excluded_no_compile += 1,
            }
        }
        c
    }

    pub fn compiling(&self) -> u64 {
        self.both_valid + self.both_invalid + self.llm_valid_instr_invalid + self.llm_invalid_instr_valid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub records: u64,
    pub quadrants: QuadrantCounts,
    pub other_mismatches: u64,
    pub unresolved: u64,
    pub llm_matrix: ConfusionMatrix,
    pub instructor_matrix: ConfusionMatrix,
    pub llm_metrics: Vec<MetricValue>,
    pub instructor_metrics: Vec<MetricValue>,
    pub per_problem: Vec<ProblemRow>,
}

pub fn evaluate(records: &[QuadrantRecord], allow_partial: bool) -> Result<EvaluationReport, EvalError> {
    let llm_matrix = confusion_matrix(records, Subject::LlmSuite, allow_partial)?;
    let instructor_matrix = confusion_matrix(records, Subject::InstructorSuite, allow_partial)?;
    Ok(EvaluationReport {
        records: records.len() as u64,
        quadrants: QuadrantCounts::tally(records),
        other_mismatches: records.iter().filter(|r| r.is_other()).count() as u64,
        unresolved: records.iter().filter(|r| r.needs_review()).count() as u64,
        llm_metrics: metric_values(&llm_matrix),
        instructor_metrics: metric_values(&instructor_matrix),
        llm_matrix,
        instructor_matrix,
        per_problem: per_problem_report(records, allow_partial)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

pub const PER_PROBLEM_CSV_HEADER: &str = "problem,solutions,matches_pct,llm_mismatches_pct,instructor_mismatches_pct";

pub fn emit_report(report: &EvaluationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(PER_PROBLEM_CSV_HEADER.split(',')).expect("in-memory write");
            for r in &report.per_problem {
                w.write_record([
                    r.problem_id.as_str(),
                    &r.n.to_string(),
                    &r.match_pct,
                    &r.llm_mismatch_pct,
                    &r.instructor_mismatch_pct,
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
        }
        ReportFormat::Markdown => markdown(report),
    }
}

fn markdown(report: &EvaluationReport) -> String {
    let mut s = String::new();
    let q = &report.quadrants;
    let _ = writeln!(s, "# Evaluation report\n");
    let _ = writeln!(s, "## Grade quadrants\n");
    let _ = writeln!(s, "| Quadrant | Solutions |\n|---|---|");
    for (label, count) in [
        ("LLM: V / Instructor: V", q.both_valid),
        ("LLM: X / Instructor: X", q.both_invalid),
        ("LLM: V / Instructor: X", q.llm_valid_instr_invalid),
        ("LLM: X / Instructor: V", q.llm_invalid_instr_valid),
        ("Does not compile", q.excluded_no_compile),
    ] {
        let _ = writeln!(s, "| {label} | {count} |");
    }
    let _ = writeln!(
        s,
        "\nOther mismatches (excluded from the matrices): {}. Unreviewed mismatches: {}.\n",
        report.other_mismatches, report.unresolved
    );

    let _ = writeln!(s, "## Mismatches by type\n");
    let _ = writeln!(
        s,
        "| Problem | # of Solutions | LLM Mismatch LLM: V / Instructor: X | LLM Mismatch LLM: X / Instructor: V | Instructor Mismatch LLM: V / Instructor: X | Instructor Mismatch LLM: X / Instructor: V | Other Mismatch LLM: V / Instructor: X | Other Mismatch LLM: X / Instructor: V |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    let mut by_id: Vec<&ProblemRow> = report.per_problem.iter().collect();
    by_id.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    for r in &by_id {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.problem_id,
            r.solutions,
            r.llm_mismatch.llm_valid,
            r.llm_mismatch.llm_invalid,
            r.instructor_mismatch.llm_valid,
            r.instructor_mismatch.llm_invalid,
            r.other_mismatch.llm_valid,
            r.other_mismatch.llm_invalid
        );
    }

    let _ = writeln!(s, "\n## Per-problem performance of the LLM suites\n");
    let _ = writeln!(s, "| Problem | # of Solutions | % of Matches | % of LLM Mismatches | % of Instructor Mismatches |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for r in &report.per_problem {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.problem_id, r.n, r.match_pct, r.llm_mismatch_pct, r.instructor_mismatch_pct
        );
    }

    for (title, m) in [("LLM test suite", &report.llm_matrix), ("Instructor test suite", &report.instructor_matrix)] {
        let _ = writeln!(s, "\n## Confusion matrix: {title}\n");
        let _ = writeln!(s, "| | Actual Valid | Actual Invalid |\n|---|---|---|");
        let _ = writeln!(s, "| Graded Valid | {} | {} |", m.tp, m.fp);
        let _ = writeln!(s, "| Graded Invalid | {} | {} |", m.fn_, m.tn);
        let _ = writeln!(s, "\nn = {}", m.n());
    }

    let _ = writeln!(s, "\n## Metrics\n");
    let _ = writeln!(s, "| Metric | LLM Test Suites | Instructor Test Suites |\n|---|---|---|");
    for (name, label) in [
        ("accuracy", "Accuracy"),
        ("precision", "Precision"),
        ("recall", "Recall"),
        ("false_positive_rate", "False Positive Rate"),
    ] {
        let cell = |values: &[MetricValue]| {
            values
                .iter()
                .find(|v| v.name == name)
                .and_then(|v| v.display.clone())
                .map_or_else(|| "undefined".to_owned(), |d| format!("{d}%"))
        };
        let _ = writeln!(s, "| {label} | {} | {} |", cell(&report.llm_metrics), cell(&report.instructor_metrics));
    }
    s
}
