use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Submission;

/// Header names for the four submission fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvColumns {
    pub code: String,
    pub student_id: String,
    pub timestamp: String,
    pub correct: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            code: "code".into(),
            student_id: "student_id".into(),
            timestamp: "timestamp".into(),
            correct: "correct".into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("submissions header is missing column(s) {missing:?}; found {found:?}")]
    SchemaMismatch { missing: Vec<String>, found: Vec<String> },
    #[error("unreadable CSV: {0}")]
    Unreadable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubmissionImport {
    pub submissions: Vec<Submission>,
    pub errors: Vec<RowError>,
}

pub fn submission_id(problem_id: &str, row: usize) -> String {
    format!("{problem_id}-s{row:04}")
}

pub fn parse_submissions_csv(
    bytes: &[u8],
    problem_id: &str,
    columns: &CsvColumns,
) -> Result<SubmissionImport, CsvError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| CsvError::Unreadable(e.to_string()))?
        .clone();
    let found: Vec<String> = headers.iter().map(|h| h.trim().to_owned()).collect();
    let position = |name: &str| found.iter().position(|h| h == name);
    let wanted = [&columns.code, &columns.student_id, &columns.timestamp, &columns.correct];
    let missing: Vec<String> = wanted
        .iter()
        .filter(|c| position(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CsvError::SchemaMismatch { missing, found });
    }
    let [code_at, student_at, time_at, correct_at] = wanted.map(|c| position(c).unwrap());

    let mut import = SubmissionImport::default();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                import.errors.push(RowError { row, message: e.to_string() });
                continue;
            }
        };
        let get = |at: usize| record.get(at);
        let parsed = (|| {
            let code = get(code_at).ok_or("missing code field")?;
            let student_id = get(student_at).ok_or("missing student id field")?.trim();
            if student_id.is_empty() {
                return Err("empty student id".to_owned());
            }
            let stamp = get(time_at).ok_or("missing timestamp field")?;
            let submitted_at = parse_timestamp(stamp)?;
            let recorded_correct = match get(correct_at).map(str::trim) {
                Some("1") => true,
                Some("0") => false,
                Some(other) => return Err(format!("correctness must be 0 or 1, got {other:?}")),
                None => return Err("missing correctness field".to_owned()),
            };
            Ok(Submission {
                id: submission_id(problem_id, row),
                student_id: student_id.to_owned(),
                submitted_at,
                code: code.to_owned(),
                recorded_correct,
            })
        })();
        match parsed {
            Ok(s) => import.submissions.push(s),
            Err(message) => import.errors.push(RowError { row, message }),
        }
    }
    Ok(import)
}

/// RFC 3339, `YYYY-MM-DD HH:MM:SS` (UTC), or Unix seconds.
pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, String> {
    let t = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(t, fmt) {
            return Ok(Utc.from_utc_datetime(&naive));
        }
    }
    if let Ok(secs) = t.parse::<i64>() {
        if let Some(dt) = Utc.timestamp_opt(secs, 0).single() {
            return Ok(dt);
        }
    }
    Err(format!("unrecognized timestamp {t:?}"))
}

pub fn write_submissions_csv(submissions: &[Submission], columns: &CsvColumns) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([&columns.code, &columns.student_id, &columns.timestamp, &columns.correct])
        .expect("in-memory write");
    for s in submissions {
        writer
            .write_record([
                s.code.as_str(),
                s.student_id.as_str(),
                &s.submitted_at.to_rfc3339(),
                if s.recorded_correct { "1" } else { "0" },
            ])
            .expect("in-memory write");
    }
    writer.into_inner().expect("in-memory flush")
}
