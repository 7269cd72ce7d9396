//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 pipeline error (a JSON summary goes to stderr),
//! 2 usage error.

pub mod review;
pub mod stages;

use std::fmt::Debug;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::Config;
use crate::evaluator::{emit_report, evaluate, EvalError, QuadrantRecord, ReportFormat};
use crate::grader::export_grades_csv;
use crate::ingest::{self, load_bundle, save_bundle, Bundle, CsvColumns};
use crate::model::SuiteKind;
use crate::runner::RunConfig;
use stages::{ProviderChoice, ProviderMode, StageReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failed stage, reported as one JSON object on stderr.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(stage: &str, kind: &str, message: impl Into<String>) -> Self {
        CliError { stage: stage.to_owned(), kind: kind.to_owned(), message: message.into() }
    }

    pub fn from_error<E: Debug + std::fmt::Display>(stage: &str, e: &E) -> Self {
        CliError { stage: stage.to_owned(), kind: variant_name(e), message: e.to_string() }
    }

    pub fn to_json(&self) -> String {
        json!({"status": "error", "stage": self.stage, "error": self.kind, "message": self.message}).to_string()
    }
}

/// Leading identifier of a value's `Debug` form: the enum variant for error enums.
pub fn variant_name<E: Debug>(e: &E) -> String {
    let debug = format!("{e:?}");
    let name: String = debug.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    if name.is_empty() {
        "Error".to_owned()
    } else {
        name
    }
}

#[derive(Debug, Parser)]
#[command(name = "testforge", version, about = "Generate, validate and compare autograder test suites for C exercises")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Grading worker threads (overrides the config file).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Root for scratch directories (overrides the config file).
    #[arg(long, global = true, value_name = "DIR")]
    pub work_root: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import a Moodle XML export (and submission CSVs) into problem bundles.
    Ingest(IngestArgs),
    /// Regenerate instructor-suite expected outputs from the reference solution.
    RegenInstructor(StageArgs),
    /// Generate the LLM suite: both prompts, then materialization.
    GenSuite(GenArgs),
    /// Grade every submission against one or both suites.
    Grade(GradeArgs),
    /// Classify grade pairs into quadrants and apply review annotations.
    Evaluate(StageArgs),
    /// List mismatches awaiting review, or annotate them.
    Review(ReviewArgs),
    /// Emit confusion matrices, metrics and per-problem tables.
    Report(ReportArgs),
    /// Run every stage for one problem bundle.
    Pipeline(GenArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Moodle XML quiz export.
    #[arg(long, value_name = "FILE")]
    pub xml: PathBuf,
    /// Submission export for one problem, as PROBLEM_ID=FILE. Repeatable.
    #[arg(long = "submissions", value_name = "ID=FILE")]
    pub submissions: Vec<String>,
    /// Directory receiving one bundle directory per problem.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value = "code")]
    pub code_column: String,
    #[arg(long, default_value = "student_id")]
    pub student_column: String,
    #[arg(long, default_value = "timestamp")]
    pub timestamp_column: String,
    #[arg(long, default_value = "correct")]
    pub correct_column: String,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Problem bundle directory.
    #[arg(long, value_name = "DIR")]
    pub problem: PathBuf,
    /// Re-run even when the inputs are unchanged.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Answer only from recorded responses; no network access.
    #[arg(long, conflicts_with = "record")]
    pub replay: bool,
    /// Call the live API and record every exchange.
    #[arg(long)]
    pub record: bool,
    /// Recorded-response directory (default: <problem>/llm).
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteChoice {
    Instructor,
    Llm,
    Both,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub suite: SuiteChoice,
    /// Also write the grade records as CSV.
    #[arg(long, value_name = "FILE")]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    /// Problem bundle directory.
    #[arg(long, value_name = "DIR")]
    pub problem: PathBuf,
    /// Record to annotate, as PROBLEM/SUBMISSION or SUBMISSION.
    #[arg(long, value_name = "RECORD", requires_all = ["cause", "resolve"], conflicts_with = "interactive")]
    pub annotate: Option<String>,
    /// Mismatch cause: llm, instructor or other.
    #[arg(long, value_parser = ["llm", "instructor", "other", "l", "i", "o"])]
    pub cause: Option<String>,
    /// Actual validity of the solution: valid or invalid.
    #[arg(long, value_parser = ["valid", "invalid", "v", "x"])]
    pub resolve: Option<String>,
    #[arg(long, default_value = "")]
    pub note: String,
    #[arg(long, default_value = "reviewer")]
    pub annotator: String,
    /// Prompt for each pending mismatch on stdin.
    #[arg(long)]
    pub interactive: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Problem bundle directories. Repeatable.
    #[arg(long, value_name = "DIR", required = true)]
    pub problem: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: ReportFormat,
    /// Write to this file instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Leave unreviewed mismatches out instead of failing.
    #[arg(long)]
    pub allow_partial: bool,
}

/// Parse `argv` and run. All output goes through the given handles.
pub fn run<I, T>(argv: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli, stdin, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json());
            EXIT_FAILURE
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| CliError::from_error("config", &e))?,
        None => Config::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(root) = &cli.work_root {
        cfg.work_root = root.clone();
    }
    cfg.validate().map_err(|e| CliError::from_error("config", &e))?;
    Ok(cfg)
}

fn load(dir: &Path, stage: &str) -> Result<Bundle, CliError> {
    load_bundle(dir).map_err(|e| CliError::from_error(stage, &e))
}

fn save(dir: &Path, b: &Bundle, stage: &str) -> Result<(), CliError> {
    save_bundle(dir, b).map(|_| ()).map_err(|e| CliError::from_error(stage, &e))
}

fn print(out: &mut dyn Write, reports: &[StageReport]) {
    for r in reports {
        let _ = writeln!(out, "{}", r.line());
    }
}

fn provider_choice(args: &GenArgs) -> ProviderChoice {
    let mode = if args.replay {
        ProviderMode::Replay
    } else if args.record {
        ProviderMode::Record
    } else {
        ProviderMode::Live
    };
    let fixtures = args.fixtures.clone().unwrap_or_else(|| args.stage.problem.join("llm"));
    ProviderChoice { mode, fixtures }
}

fn suites(choice: SuiteChoice) -> &'static [SuiteKind] {
    match choice {
        SuiteChoice::Instructor => &[SuiteKind::Instructor],
        SuiteChoice::Llm => &[SuiteKind::Llm],
        SuiteChoice::Both => &[SuiteKind::Instructor, SuiteKind::Llm],
    }
}

fn execute(cli: &Cli, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    if let Command::Ingest(args) = &cli.command {
        return run_ingest(args, out);
    }
    let cfg = resolve_config(cli)?;
    let run: RunConfig = cfg.run_config().map_err(|e| CliError::from_error("config", &e))?;
    match &cli.command {
        Command::Ingest(_) => unreachable!("handled above"),
        Command::RegenInstructor(a) => {
            let mut b = load(&a.problem, stages::REGEN_INSTRUCTOR)?;
            let r = stages::regen_instructor(&mut b, &cfg, &run, a.force)?;
            save(&a.problem, &b, stages::REGEN_INSTRUCTOR)?;
            print(out, &[r]);
        }
        Command::GenSuite(a) => {
            let dir = &a.stage.problem;
            let mut b = load(dir, stages::GENERATION)?;
            let result = stages::gen_suite(&mut b, dir, &cfg, &run, &provider_choice(a), a.stage.force);
            // Keep whatever finished (seed, artifact) even if a later step failed.
            save(dir, &b, stages::GENERATION)?;
            print(out, &result?);
        }
        Command::Grade(a) => {
            let dir = &a.stage.problem;
            let mut b = load(dir, "grade")?;
            for &kind in suites(a.suite) {
                let r = stages::grade(&mut b, &cfg, &run, kind, a.stage.force)?;
                save(dir, &b, &r.stage)?;
                print(out, &[r]);
            }
            if let Some(path) = &a.export {
                let records: Vec<_> = suites(a.suite).iter().filter_map(|k| b.grades.get(k)).flatten().cloned().collect();
                crate::fsutil::write_atomic(path, export_grades_csv(&records).as_bytes())
                    .map_err(|e| CliError::from_error("grade", &e))?;
            }
        }
        Command::Evaluate(a) => {
            let mut b = load(&a.problem, stages::EVALUATE)?;
            let r = stages::evaluate(&mut b, &a.problem, a.force)?;
            save(&a.problem, &b, stages::EVALUATE)?;
            print(out, &[r]);
        }
        Command::Review(a) => run_review(a, stdin, out)?,
        Command::Report(a) => run_report(a, out)?,
        Command::Pipeline(a) => {
            let dir = &a.stage.problem;
            let force = a.stage.force;
            let mut b = load(dir, "pipeline")?;
            let r = stages::regen_instructor(&mut b, &cfg, &run, force)?;
            save(dir, &b, &r.stage)?;
            print(out, &[r]);
            let result = stages::gen_suite(&mut b, dir, &cfg, &run, &provider_choice(a), force);
            save(dir, &b, stages::GENERATION)?;
            print(out, &result?);
            for kind in [SuiteKind::Instructor, SuiteKind::Llm] {
                let r = stages::grade(&mut b, &cfg, &run, kind, force)?;
                save(dir, &b, &r.stage)?;
                print(out, &[r]);
            }
            let r = stages::evaluate(&mut b, dir, force)?;
            save(dir, &b, stages::EVALUATE)?;
            print(out, &[r]);
        }
    }
    Ok(())
}

fn run_ingest(args: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "ingest";
    let xml = std::fs::read(&args.xml).map_err(|e| CliError::from_error(STAGE, &e))?;
    let import = ingest::parse_moodle_xml(&xml).map_err(|e| CliError::from_error(STAGE, &e))?;
    for w in &import.warnings {
        log::warn!("{}: {:?}: {}", w.question, w.kind, w.message);
    }
    let columns = CsvColumns {
        code: args.code_column.clone(),
        student_id: args.student_column.clone(),
        timestamp: args.timestamp_column.clone(),
        correct: args.correct_column.clone(),
    };
    let mut csvs = std::collections::BTreeMap::new();
    for spec in &args.submissions {
        let (id, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::new(STAGE, "UsageError", format!("--submissions expects ID=FILE, got {spec}")))?;
        if !import.problems.iter().any(|p| p.id == id) {
            return Err(CliError::new(STAGE, "UnknownProblem", format!("{id} is not a problem in {}", args.xml.display())));
        }
        csvs.insert(id.to_owned(), PathBuf::from(path));
    }
    for problem in import.problems {
        let dir = args.out.join(&problem.id);
        let mut submissions = Vec::new();
        if let Some(path) = csvs.get(&problem.id) {
            let bytes = std::fs::read(path).map_err(|e| CliError::from_error(STAGE, &e))?;
            let parsed = ingest::parse_submissions_csv(&bytes, &problem.id, &columns)
                .map_err(|e| CliError::from_error(STAGE, &e))?;
            for e in &parsed.errors {
                let _ = writeln!(out, "{}: row {}: {}", path.display(), e.row, e.message);
            }
            submissions = parsed.submissions;
        }
        // Re-ingesting keeps downstream state; stage digests invalidate what changed.
        let bundle = match load_bundle(&dir) {
            Ok(mut existing) => {
                existing.problem = problem;
                if csvs.contains_key(&existing.problem.id) {
                    existing.submissions = submissions;
                }
                existing
            }
            Err(_) => Bundle::new(problem, submissions),
        };
        save(&dir, &bundle, STAGE)?;
        let status = match &bundle.problem.exclusion_reason {
            Some(reason) => format!(" (excluded: {reason})"),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{}: {:?}, {} instructor tests, {} submissions{status}",
            dir.display(),
            bundle.problem.kind,
            bundle.problem.instructor_tests.len(),
            bundle.submissions.len()
        );
    }
    let _ = writeln!(out, "{} warning(s)", import.warnings.len());
    Ok(())
}

fn run_review(a: &ReviewArgs, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let b = load(&a.problem, "review")?;
    let changed = if let Some(record) = &a.annotate {
        let cause = a.cause.as_deref().and_then(review::parse_cause).expect("validated by clap");
        let resolved = a.resolve.as_deref().and_then(review::parse_resolved).expect("validated by clap");
        review::annotate(&b, &a.problem, record, cause, resolved, &a.note, &a.annotator)?;
        let _ = writeln!(out, "annotated {record}");
        true
    } else if a.interactive {
        review::interactive(&b, &a.problem, &a.annotator, stdin, out)? > 0
    } else {
        review::list(&b, out)?;
        false
    };
    if changed {
        let mut b = b;
        let r = stages::evaluate(&mut b, &a.problem, false)?;
        save(&a.problem, &b, stages::EVALUATE)?;
        print(out, &[r]);
    }
    Ok(())
}

fn run_report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "report";
    let mut records: Vec<QuadrantRecord> = Vec::new();
    for dir in &a.problem {
        let b = load(dir, STAGE)?;
        match b.evaluation {
            Some(e) => records.extend(e),
            None if b.problem.is_excluded() => {}
            None => {
                return Err(CliError::new(
                    STAGE,
                    "MissingEvaluation",
                    format!("{} has no evaluation; run `evaluate` first", dir.display()),
                ))
            }
        }
    }
    let report = evaluate(&records, a.allow_partial).map_err(|e| {
        let mut err = CliError::from_error(STAGE, &e);
        if matches!(e, EvalError::UnresolvedMismatches(_)) {
            err.message.push_str("; annotate them with `review` or pass --allow-partial");
        }
        err
    })?;
    let text = emit_report(&report, a.format);
    match &a.out {
        Some(path) => {
            crate::fsutil::write_atomic(path, text.as_bytes()).map_err(|e| CliError::from_error(STAGE, &e))?;
        }
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    Ok(())
}
