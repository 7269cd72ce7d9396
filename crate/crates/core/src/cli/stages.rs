//! Pipeline stages over a problem bundle. Each stage records a digest of
//! its inputs and is skipped when that digest has not changed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Utc;
use rand::Rng;

use super::CliError;
use crate::config::Config;
use crate::evaluator::{apply_ledger, AnnotationLedger, QuadrantCounts, QuadrantRecord};
use crate::grader::grade_batch;
use crate::ingest::bundle::{content_digest, Bundle, ANNOTATIONS_FILE, TRANSCRIPTS_DIR};
use crate::llm::fixtures::{FixtureStore, RecordingProvider, ReplayProvider};
use crate::llm::openai::{forbid_network, OpenAiProvider};
use crate::llm::{ChatProvider, Gateway};
use crate::model::{Grade, GradeRecord, Separator, SuiteKind};
use crate::prompt::{HarnessContract, Pipeline, PROMPT_VERSION};
use crate::runner::RunConfig;
use crate::suite::{build_llm_suite, describe, regenerate_instructor_outputs_with, MaterializeOptions};

/// Bumped whenever a stage's behavior changes in a way its inputs do not show.
const STAGE_SCHEMA: u32 = 1;

pub const REGEN_INSTRUCTOR: &str = "regen-instructor";
pub const GENERATION: &str = "generation";
pub const LLM_SUITE: &str = "llm-suite";
pub const EVALUATE: &str = "evaluate";

pub fn grade_stage(kind: SuiteKind) -> String {
    format!("grade-{}", kind.label())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: String,
    pub skipped: bool,
    pub summary: String,
}

impl StageReport {
    fn ran(stage: &str, summary: String) -> Self {
        StageReport { stage: stage.to_owned(), skipped: false, summary }
    }

    fn skipped(stage: &str, summary: impl Into<String>) -> Self {
        StageReport { stage: stage.to_owned(), skipped: true, summary: summary.into() }
    }

    pub fn line(&self) -> String {
        let state = if self.skipped { "skipped" } else { "done" };
        format!("[{}] {state}: {}", self.stage, self.summary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone)]
pub struct ProviderChoice {
    pub mode: ProviderMode,
    pub fixtures: PathBuf,
}

fn separator_nonce(b: &mut Bundle, cfg: &Config) -> u32 {
    let n = cfg
        .separator_nonces
        .get(&b.problem.id)
        .copied()
        .or(b.separator_nonce)
        .unwrap_or_else(|| rand::thread_rng().gen_range(0..100_000_000));
    b.separator_nonce = Some(n);
    n
}

fn suite_seed(b: &mut Bundle, cfg: &Config) -> u32 {
    let s = cfg
        .seeds
        .get(&b.problem.id)
        .copied()
        .or(b.seed)
        .unwrap_or_else(|| rand::thread_rng().gen());
    b.seed = Some(s);
    s
}

pub fn regen_instructor(b: &mut Bundle, cfg: &Config, run: &RunConfig, force: bool) -> Result<StageReport, CliError> {
    if let Some(reason) = &b.problem.exclusion_reason {
        return Ok(StageReport::skipped(REGEN_INSTRUCTOR, format!("problem excluded ({reason})")));
    }
    let nonce = separator_nonce(b, cfg);
    let digest = content_digest(&[
        &STAGE_SCHEMA,
        &b.problem,
        &run.toolchain,
        &run.limits,
        &run.template.text(),
        &nonce,
    ]);
    if !force && b.instructor_suite.is_some() && b.is_current(REGEN_INSTRUCTOR, &digest) {
        return Ok(StageReport::skipped(REGEN_INSTRUCTOR, "up to date"));
    }
    let opts = MaterializeOptions { separator_seed: Some(u64::from(nonce)), per_test_seeds: false };
    let suite = regenerate_instructor_outputs_with(&b.problem, Separator::with_nonce(nonce), run, opts)
        .map_err(|e| CliError::from_error(REGEN_INSTRUCTOR, &e))?;
    let summary = describe(&suite);
    b.instructor_suite = Some(suite);
    b.stages.insert(REGEN_INSTRUCTOR.into(), digest);
    Ok(StageReport::ran(REGEN_INSTRUCTOR, summary))
}

fn gateway(choice: &ProviderChoice, cfg: &Config) -> Result<Gateway, CliError> {
    let store = FixtureStore::new(&choice.fixtures);
    let live = || OpenAiProvider::from_env(cfg.endpoint.as_deref()).map_err(|e| CliError::from_error(GENERATION, &e));
    let provider: Box<dyn ChatProvider> = match choice.mode {
        ProviderMode::Replay => {
            forbid_network();
            Box::new(ReplayProvider::new(store))
        }
        ProviderMode::Record => Box::new(RecordingProvider::new(live()?, store)),
        ProviderMode::Live => Box::new(live()?),
    };
    Ok(Gateway::new(provider))
}

/// Generate the suite source (both prompts), then build and materialize the
/// LLM suite from it.
pub fn gen_suite(
    b: &mut Bundle,
    dir: &Path,
    cfg: &Config,
    run: &RunConfig,
    provider: &ProviderChoice,
    force: bool,
) -> Result<Vec<StageReport>, CliError> {
    if let Some(reason) = &b.problem.exclusion_reason {
        return Ok(vec![StageReport::skipped(GENERATION, format!("problem excluded ({reason})"))]);
    }
    let mut reports = Vec::new();
    let model = cfg.model();
    let gen_digest = content_digest(&[&STAGE_SCHEMA, &b.problem, &model, &PROMPT_VERSION, &run.template.text()]);
    if !force && b.generation.is_some() && b.is_current(GENERATION, &gen_digest) {
        reports.push(StageReport::skipped(GENERATION, "up to date"));
    } else {
        let gw = gateway(provider, cfg)?;
        let pipeline = Pipeline { gateway: &gw, model, contract: HarnessContract { template: run.template.clone() } };
        match pipeline.generate_suite_source(&b.problem) {
            Ok(artifact) => {
                let u = artifact.token_usage;
                reports.push(StageReport::ran(
                    GENERATION,
                    format!(
                        "{:?} via {} provider; tokens: {} prompt + {} completion = {}",
                        artifact.kind,
                        gw.provider_name(),
                        u.prompt,
                        u.completion,
                        u.total
                    ),
                ));
                b.generation = Some(artifact);
                b.stages.insert(GENERATION.into(), gen_digest);
            }
            Err(e) => {
                let mut err = CliError::from_error(GENERATION, &e);
                if let crate::prompt::GenerationError::Gateway { source, .. } = &e {
                    err.kind = super::variant_name(source);
                }
                if let Some(t) = e.transcript() {
                    let name = format!("{}-{}.json", b.problem.id, Utc::now().format("%Y%m%dT%H%M%S%.3fZ"));
                    let path = dir.join(TRANSCRIPTS_DIR).join(name);
                    if crate::fsutil::write_atomic(&path, t.to_json().as_bytes()).is_ok() {
                        err.message.push_str(&format!(" (transcript saved to {})", path.display()));
                    }
                }
                return Err(err);
            }
        }
    }

    let seed = suite_seed(b, cfg);
    let nonce = separator_nonce(b, cfg);
    let artifact = b.generation.clone().expect("generation stage produced an artifact");
    let digest = content_digest(&[
        &STAGE_SCHEMA,
        &b.problem,
        &artifact,
        &seed,
        &nonce,
        &cfg.per_test_seeds,
        &run.toolchain,
        &run.limits,
        &run.interpreter,
        &run.template.text(),
    ]);
    if !force && b.llm_suite.is_some() && b.is_current(LLM_SUITE, &digest) {
        reports.push(StageReport::skipped(LLM_SUITE, "up to date"));
        return Ok(reports);
    }
    let opts = MaterializeOptions { separator_seed: Some(u64::from(nonce)), per_test_seeds: cfg.per_test_seeds };
    let suite = build_llm_suite(&b.problem, &artifact, seed, Separator::with_nonce(nonce), run, opts)
        .map_err(|e| CliError::from_error(LLM_SUITE, &e))?;
    let mut summary = describe(&suite);
    for r in &suite.rejected {
        summary.push_str(&format!("\n    rejected test {}: {}", r.test.index, r.reason));
    }
    b.llm_suite = Some(suite);
    b.stages.insert(LLM_SUITE.into(), digest);
    reports.push(StageReport::ran(LLM_SUITE, summary));
    Ok(reports)
}

pub fn grade(b: &mut Bundle, cfg: &Config, run: &RunConfig, kind: SuiteKind, force: bool) -> Result<StageReport, CliError> {
    let stage = grade_stage(kind);
    if let Some(reason) = &b.problem.exclusion_reason {
        return Ok(StageReport::skipped(&stage, format!("problem excluded ({reason})")));
    }
    let suite = b.suite(kind).ok_or_else(|| {
        let hint = match kind {
            SuiteKind::Instructor => "regen-instructor",
            SuiteKind::Llm => "gen-suite",
        };
        CliError::new(&stage, "MissingSuite", format!("no {kind} suite in the bundle; run `{hint}` first"))
    })?;
    let digest = content_digest(&[
        &STAGE_SCHEMA,
        &b.problem,
        &b.submissions,
        suite,
        &run.toolchain,
        &run.limits,
        &run.template.text(),
        &cfg.comparison,
    ]);
    if !force && b.grades.contains_key(&kind) && b.is_current(&stage, &digest) {
        return Ok(StageReport::skipped(&stage, "up to date"));
    }
    let records = grade_batch(&b.submissions, suite, &b.problem, run, cfg.comparison, cfg.workers);
    let summary = grade_summary(kind, &records);
    b.grades.insert(kind, records);
    b.stages.insert(stage.clone(), digest);
    Ok(StageReport::ran(&stage, summary))
}

fn grade_summary(kind: SuiteKind, records: &[GradeRecord]) -> String {
    let count = |g: Grade| records.iter().filter(|r| r.grade == g).count();
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    let mut s = format!(
        "{kind} suite: {} submissions, {} graded 1, {} graded 0, {} graded -1",
        records.len(),
        count(Grade::Pass),
        count(Grade::Fail),
        count(Grade::NoCompile)
    );
    if errors > 0 {
        s.push_str(&format!(" ({errors} with infrastructure errors)"));
    }
    s
}

/// Pair the two grade lists by submission and classify each pair.
pub fn quadrant_records(b: &Bundle) -> Result<Vec<QuadrantRecord>, CliError> {
    let missing = |kind: SuiteKind| {
        CliError::new(EVALUATE, "MissingGrades", format!("no {kind} grades in the bundle; run `grade` first"))
    };
    let llm = b.grades.get(&SuiteKind::Llm).ok_or_else(|| missing(SuiteKind::Llm))?;
    let instructor = b.grades.get(&SuiteKind::Instructor).ok_or_else(|| missing(SuiteKind::Instructor))?;
    let by_id: BTreeMap<&str, &GradeRecord> = instructor.iter().map(|r| (r.submission.as_str(), r)).collect();
    llm.iter()
        .map(|l| {
            let i = by_id.get(l.submission.as_str()).ok_or_else(|| {
                CliError::new(EVALUATE, "MissingGrades", format!("{} has no instructor-suite grade", l.submission))
            })?;
            Ok(QuadrantRecord::new(&b.problem.id, &l.submission, l.grade, i.grade))
        })
        .collect()
}

pub fn ledger_for(dir: &Path) -> AnnotationLedger {
    AnnotationLedger::new(dir.join(ANNOTATIONS_FILE))
}

pub fn evaluate(b: &mut Bundle, dir: &Path, force: bool) -> Result<StageReport, CliError> {
    if let Some(reason) = &b.problem.exclusion_reason {
        return Ok(StageReport::skipped(EVALUATE, format!("problem excluded ({reason})")));
    }
    let entries = ledger_for(dir).load().map_err(|e| CliError::from_error(EVALUATE, &e))?;
    let mut records = quadrant_records(b)?;
    let digest = content_digest(&[&STAGE_SCHEMA, &records, &entries]);
    if !force && b.evaluation.is_some() && b.is_current(EVALUATE, &digest) {
        return Ok(StageReport::skipped(EVALUATE, "up to date"));
    }
    let stale = apply_ledger(&mut records, &entries).map_err(|e| CliError::from_error(EVALUATE, &e))?;
    for s in &stale {
        log::warn!("ignoring annotation for {s}");
    }
    let q = QuadrantCounts::tally(&records);
    let pending = records.iter().filter(|r| r.needs_review()).count();
    let summary = format!(
        "{} solutions: {} both valid, {} both invalid, {} LLM valid / instructor invalid, {} LLM invalid / instructor valid, {} not compiling; {pending} awaiting review",
        records.len(),
        q.both_valid,
        q.both_invalid,
        q.llm_valid_instr_invalid,
        q.llm_invalid_instr_valid,
        q.excluded_no_compile
    );
    b.evaluation = Some(records);
    b.stages.insert(EVALUATE.into(), digest);
    Ok(StageReport::ran(EVALUATE, summary))
}
