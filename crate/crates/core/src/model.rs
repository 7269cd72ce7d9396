//! Data model shared by every pipeline stage.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Complete program reading stdin and writing stdout.
    FullProgram,
    /// A single function exercised by harness code.
    FunctionImplementation,
}

/// What a test feeds to the solution under test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "text", rename_all = "snake_case")]
pub enum Payload {
    Stdin(String),
    Code(String),
}

impl Payload {
    pub fn text(&self) -> &str {
        match self {
            Payload::Stdin(s) | Payload::Code(s) => s,
        }
    }

    pub fn matches_kind(&self, kind: ProblemKind) -> bool {
        matches!(
            (self, kind),
            (Payload::Stdin(_), ProblemKind::FullProgram)
                | (Payload::Code(_), ProblemKind::FunctionImplementation)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructorTest {
    pub payload: Payload,
    /// Expected output as exported; may be empty.
    pub expected_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub name: String,
    pub kind: ProblemKind,
    pub statement_text: String,
    pub reference_solution: String,
    pub extra_code: Option<String>,
    pub instructor_tests: Vec<InstructorTest>,
    /// Set when the problem is ingested but kept out of the study (e.g. it uses files).
    pub exclusion_reason: Option<String>,
}

impl Problem {
    pub fn is_excluded(&self) -> bool {
        self.exclusion_reason.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    /// Stable reference within the problem, derived from the CSV row position.
    pub id: String,
    pub student_id: String,
    pub submitted_at: DateTime<Utc>,
    pub code: String,
    pub recorded_correct: bool,
}

/// Raw program output. Kept as bytes so comparison stays exact; serialized
/// as a plain string when it is valid UTF-8.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct OutputText(pub Vec<u8>);

impl OutputText {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_display(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }

    pub fn contains(&self, needle: &[u8]) -> bool {
        !needle.is_empty() && self.0.windows(needle.len()).any(|w| w == needle)
    }
}

impl From<&str> for OutputText {
    fn from(s: &str) -> Self {
        OutputText(s.as_bytes().to_vec())
    }
}

impl From<Vec<u8>> for OutputText {
    fn from(v: Vec<u8>) -> Self {
        OutputText(v)
    }
}

impl fmt::Debug for OutputText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OutputRepr {
    Text(String),
    Bytes { hex: String },
}

impl Serialize for OutputText {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(&self.0) {
            Ok(text) => OutputRepr::Text(text.to_owned()).serialize(s),
            Err(_) => OutputRepr::Bytes {
                hex: hex::encode(&self.0),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for OutputText {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match OutputRepr::deserialize(d)? {
            OutputRepr::Text(t) => Ok(OutputText(t.into_bytes())),
            OutputRepr::Bytes { hex } => hex::decode(hex)
                .map(OutputText)
                .map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOrigin {
    EdgeCase,
    Random,
    Instructor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Test {
    pub index: usize,
    pub payload: Payload,
    pub expected_output: Option<OutputText>,
    pub origin: TestOrigin,
    /// Expected output as originally exported; audit only, never graded against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_expected: Option<String>,
}

impl Test {
    pub fn new(index: usize, payload: Payload, origin: TestOrigin) -> Self {
        Test {
            index,
            payload,
            expected_output: None,
            origin,
            original_expected: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedTest {
    pub test: Test,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Instructor,
    Llm,
}

impl SuiteKind {
    pub fn label(self) -> &'static str {
        match self {
            SuiteKind::Instructor => "instructor",
            SuiteKind::Llm => "llm",
        }
    }
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Line printed between test scopes of a combined harness run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Separator(String);

impl Separator {
    pub fn with_nonce(nonce: u32) -> Self {
        Separator(format!("#<ab@{:08}#@>#", nonce % 100_000_000))
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        Self::with_nonce(rng.gen_range(0..100_000_000))
    }

    /// Arbitrary token, for tests and custom harnesses.
    pub fn custom(token: impl Into<String>) -> Self {
        Separator(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl fmt::Display for Separator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub problem_id: String,
    pub kind: SuiteKind,
    /// Active tests. In a finalized suite every one has an expected output.
    pub tests: Vec<Test>,
    /// Tests dropped because the reference solution crashed on them.
    #[serde(default)]
    pub rejected: Vec<RejectedTest>,
    /// `srand` seed used before each scope; LLM suites of function problems.
    pub seed: Option<u32>,
    /// Derive a distinct, fixed seed per test instead of sharing one.
    #[serde(default)]
    pub per_test_seeds: bool,
    pub separator: Separator,
}

impl TestSuite {
    pub fn new(problem_id: &str, kind: SuiteKind, separator: Separator) -> Self {
        TestSuite {
            problem_id: problem_id.to_owned(),
            kind,
            tests: Vec::new(),
            rejected: Vec::new(),
            seed: None,
            per_test_seeds: false,
            separator,
        }
    }

    pub fn is_finalized(&self) -> bool {
        self.tests.iter().all(|t| t.expected_output.is_some())
    }

    /// Seed for the scope holding test `position` (0-based position in `tests`).
    pub fn seed_for(&self, position: usize) -> Option<u32> {
        let seed = self.seed?;
        if !self.per_test_seeds {
            return Some(seed);
        }
        let index = self.tests.get(position).map_or(position, |t| t.index) as u32;
        Some(seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9))
    }
}

/// Suite-level grade: pass all, fail at least one, or did not compile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Grade {
    NoCompile,
    Fail,
    Pass,
}

impl Grade {
    pub fn value(self) -> i8 {
        match self {
            Grade::Pass => 1,
            Grade::Fail => 0,
            Grade::NoCompile => -1,
        }
    }
}

impl From<Grade> for i8 {
    fn from(g: Grade) -> i8 {
        g.value()
    }
}

impl TryFrom<i8> for Grade {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Grade::Pass),
            0 => Ok(Grade::Fail),
            -1 => Ok(Grade::NoCompile),
            other => Err(format!("invalid grade {other}")),
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Why a test produced no comparable output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum Fault {
    NonZeroExit { code: i32 },
    Signal { signal: i32 },
    Timeout,
    OutputLimit,
    /// Exited cleanly from inside a scope, so later scopes never ran.
    EarlyExit,
    /// An earlier scope of the same harness process terminated it.
    NotReached,
    /// The harness output did not split into the expected number of segments.
    SeparatorMismatch,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::NonZeroExit { code } => write!(f, "exited with status {code}"),
            Fault::Signal { signal } => write!(f, "killed by signal {signal}"),
            Fault::Timeout => f.write_str("timed out"),
            Fault::OutputLimit => f.write_str("exceeded the output limit"),
            Fault::EarlyExit => f.write_str("ended the harness early"),
            Fault::NotReached => f.write_str("not reached: an earlier test terminated the harness"),
            Fault::SeparatorMismatch => f.write_str("harness output could not be split"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDetail {
    pub test_index: usize,
    /// Actual output, truncated for storage; `None` when the test produced no output.
    pub actual: Option<OutputText>,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub submission: String,
    pub suite: SuiteKind,
    pub grade: Grade,
    pub per_test: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureDetail>,
    /// Infrastructure error while running this submission; the batch continued.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GradeRecord {
    pub fn failed_tests(&self) -> Vec<usize> {
        self.per_test
            .iter()
            .enumerate()
            .filter(|(_, ok)| !**ok)
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separator_shape() {
        assert_eq!(Separator::with_nonce(17943918).as_str(), "#<ab@17943918#@>#");
        assert_eq!(Separator::with_nonce(42).as_str(), "#<ab@00000042#@>#");
    }

    #[test]
    fn grade_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Grade::NoCompile).unwrap(), "-1");
        let g: Grade = serde_json::from_str("1").unwrap();
        assert_eq!(g, Grade::Pass);
        assert!(serde_json::from_str::<Grade>("2").is_err());
    }

    #[test]
    fn output_text_keeps_invalid_utf8() {
        let raw = OutputText(vec![b'a', 0xff, b'\n']);
        let json = serde_json::to_string(&raw).unwrap();
        assert_eq!(json, r#"{"hex":"61ff0a"}"#);
        let back: OutputText = serde_json::from_str(&json).unwrap();
        assert_eq!(back, raw);
        let plain: OutputText = serde_json::from_str(r#""hi""#).unwrap();
        assert_eq!(plain.as_bytes(), b"hi");
    }

    #[test]
    fn per_test_seed_is_stable_and_distinct() {
        let mut suite = TestSuite::new("p", SuiteKind::Llm, Separator::with_nonce(1));
        suite.seed = Some(761177235);
        for i in 0..3 {
            suite.tests.push(Test::new(i, Payload::Code(String::new()), TestOrigin::EdgeCase));
        }
        assert_eq!(suite.seed_for(2), Some(761177235));
        suite.per_test_seeds = true;
        let a = suite.seed_for(0);
        assert_eq!(a, suite.seed_for(0));
        assert_ne!(a, suite.seed_for(1));
    }
}
