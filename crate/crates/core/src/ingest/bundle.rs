//! Problem bundles: one directory per problem holding `bundle.json`, the
//! annotation ledger and any saved generation transcripts.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluator::QuadrantRecord;
use crate::fsutil::write_atomic;
use crate::model::{GradeRecord, Problem, Submission, SuiteKind, TestSuite};
use crate::prompt::GenerationArtifact;

pub const BUNDLE_VERSION: u32 = 1;
pub const BUNDLE_FILE: &str = "bundle.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: bundle version {found:?} is not supported (expected {expected})")]
    VersionMismatch { path: PathBuf, found: Option<u64>, expected: u32 },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub version: u32,
    pub problem: Problem,
    #[serde(default)]
    pub submissions: Vec<Submission>,
    /// `srand` seed for the LLM suite; drawn once and then kept.
    #[serde(default)]
    pub seed: Option<u32>,
    /// Nonce of the separator token; drawn once and then kept.
    #[serde(default)]
    pub separator_nonce: Option<u32>,
    #[serde(default)]
    pub instructor_suite: Option<TestSuite>,
    #[serde(default)]
    pub generation: Option<GenerationArtifact>,
    #[serde(default)]
    pub llm_suite: Option<TestSuite>,
    #[serde(default)]
    pub grades: BTreeMap<SuiteKind, Vec<GradeRecord>>,
    #[serde(default)]
    pub evaluation: Option<Vec<QuadrantRecord>>,
    /// Input digest of each completed stage, for skipping unchanged work.
    #[serde(default)]
    pub stages: BTreeMap<String, String>,
}

impl Bundle {
    pub fn new(problem: Problem, submissions: Vec<Submission>) -> Self {
        Bundle {
            version: BUNDLE_VERSION,
            problem,
            submissions,
            seed: None,
            separator_nonce: None,
            instructor_suite: None,
            generation: None,
            llm_suite: None,
            grades: BTreeMap::new(),
            evaluation: None,
            stages: BTreeMap::new(),
        }
    }

    pub fn suite(&self, kind: SuiteKind) -> Option<&TestSuite> {
        match kind {
            SuiteKind::Instructor => self.instructor_suite.as_ref(),
            SuiteKind::Llm => self.llm_suite.as_ref(),
        }
    }

    pub fn is_current(&self, stage: &str, digest: &str) -> bool {
        self.stages.get(stage).is_some_and(|d| d == digest)
    }
}

/// Hex SHA-256 over the JSON encodings of `parts`.
pub fn content_digest(parts: &[&dyn erased::Json]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.json_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

pub mod erased {
    use serde::Serialize;

    /// Object-safe view of a serializable value.
    pub trait Json {
        fn json_bytes(&self) -> Vec<u8>;
    }

    impl<T: Serialize> Json for T {
        fn json_bytes(&self) -> Vec<u8> {
            serde_json::to_vec(self).expect("digest input serializes")
        }
    }
}

pub fn bundle_path(dir: &Path) -> PathBuf {
    dir.join(BUNDLE_FILE)
}

pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<PathBuf, BundleError> {
    let path = bundle_path(dir);
    let mut bytes = serde_json::to_vec_pretty(bundle).expect("bundle serializes");
    bytes.push(b'\n');
    write_atomic(&path, &bytes).map_err(|source| BundleError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Load `dir/bundle.json`. Unparseable files and other versions are
/// rejected whole.
pub fn load_bundle(dir: &Path) -> Result<Bundle, BundleError> {
    let path = bundle_path(dir);
    let bytes = fs::read(&path).map_err(|source| BundleError::Io { path: path.clone(), source })?;
    let value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| BundleError::Corrupt { path: path.clone(), message: e.to_string() })?;
    let found = value.get("version").and_then(Value::as_u64);
    if found != Some(u64::from(BUNDLE_VERSION)) {
        return Err(BundleError::VersionMismatch { path, found, expected: BUNDLE_VERSION });
    }
    serde_json::from_value(value).map_err(|e| BundleError::Corrupt { path, message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn sample() -> Bundle {
        let problem = Problem {
            id: "p07".into(),
            name: "Hamming".into(),
            kind: ProblemKind::FunctionImplementation,
            statement_text: "Compare two words.".into(),
            reference_solution: "int f(void) { return 0; }\n".into(),
            extra_code: None,
            instructor_tests: vec![InstructorTest {
                payload: Payload::Code("printf(\"%d\\n\", f());\n".into()),
                expected_output: "0\n".into(),
            }],
            exclusion_reason: None,
        };
        let mut b = Bundle::new(problem, Vec::new());
        let mut suite = TestSuite::new("p07", SuiteKind::Llm, Separator::with_nonce(17943918));
        let mut kept = Test::new(0, Payload::Code("f();\n".into()), TestOrigin::EdgeCase);
        kept.expected_output = Some(OutputText(vec![0xff, b'\n']));
        suite.tests.push(kept);
        suite.rejected.push(RejectedTest {
            test: Test::new(1, Payload::Code("f(1/0);\n".into()), TestOrigin::Random),
            reason: "reference solution crashed: killed by signal 8".into(),
        });
        suite.seed = Some(761177235);
        b.llm_suite = Some(suite);
        b.seed = Some(761177235);
        b.stages.insert("llm_suite".into(), "abc".into());
        b
    }

    #[test]
    fn round_trip_keeps_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample();
        save_bundle(dir.path(), &b).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.llm_suite.unwrap().rejected.len(), 1);
    }

    #[test]
    fn corrupt_and_foreign_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_bundle(dir.path(), &sample()).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() / 2]).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Corrupt { .. })));

        let mut v: Value = serde_json::from_slice(&full).unwrap();
        v["version"] = 99.into();
        fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::VersionMismatch { found: Some(99), .. })));

        assert!(matches!(load_bundle(&dir.path().join("missing")), Err(BundleError::Io { .. })));
    }

    #[test]
    fn digests_track_content() {
        let a = content_digest(&[&"x", &1u32]);
        assert_eq!(a, content_digest(&[&"x", &1u32]));
        assert_ne!(a, content_digest(&[&"x", &2u32]));
        assert_ne!(content_digest(&[&"ab", &"c"]), content_digest(&[&"a", &"bc"]));
    }
}
