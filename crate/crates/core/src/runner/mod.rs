//! Compiling C sources and running solutions against a suite.

pub mod compile;
pub mod exec;
pub mod harness;
pub mod split;

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Fault, OutputText, Payload, Problem, ProblemKind, TestSuite};

pub use compile::{compile, Toolchain};
pub use exec::{execute, ExecLimits, ExitStatus, Limits, RunResult};
pub use harness::{assemble_function_harness, HarnessSource, HarnessTemplate};
pub use split::{join_outputs, split_output};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("compilation failed:\n{0}")]
    Compile(String),
    #[error("C toolchain `{0}` not found")]
    ToolchainMissing(String),
    #[error("harness template has no `{{{{{0}}}}}` slot")]
    TemplateSlotMissing(String),
    #[error("harness error: {0}")]
    Harness(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Interpreter used for generator scripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpreter {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl Default for Interpreter {
    fn default() -> Self {
        Interpreter {
            command: "python3".to_owned(),
            args: Vec::new(),
        }
    }
}

/// Everything needed to compile and execute solutions.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub toolchain: Toolchain,
    pub limits: Limits,
    pub interpreter: Interpreter,
    pub template: HarnessTemplate,
    /// Scratch directories are created below this root.
    pub work_root: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            toolchain: Toolchain::default(),
            limits: Limits::default(),
            interpreter: Interpreter::default(),
            template: HarnessTemplate::default(),
            work_root: std::env::temp_dir(),
        }
    }
}

impl RunConfig {
    pub fn scratch_dir(&self) -> io::Result<tempfile::TempDir> {
        std::fs::create_dir_all(&self.work_root)?;
        tempfile::Builder::new()
            .prefix("testforge-")
            .tempdir_in(&self.work_root)
    }

    pub fn exec_limits(&self) -> ExecLimits {
        ExecLimits {
            timeout: self.limits.run_timeout,
            memory_bytes: Some(self.limits.memory_bytes),
            output_cap: self.limits.output_cap,
        }
    }
}

/// Outcome of one test for one solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestRun {
    /// `None` is the no-output marker: the test crashed, timed out or never ran.
    pub output: Option<OutputText>,
    pub fault: Option<Fault>,
}

impl TestRun {
    fn ok(output: Vec<u8>) -> Self {
        TestRun {
            output: Some(OutputText(output)),
            fault: None,
        }
    }

    fn lost(fault: Fault) -> Self {
        TestRun {
            output: None,
            fault: Some(fault),
        }
    }
}

fn fault_of(result: &RunResult) -> Option<Fault> {
    if result.output_limited {
        return Some(Fault::OutputLimit);
    }
    match result.status {
        ExitStatus::Exited(0) => None,
        ExitStatus::Exited(code) => Some(Fault::NonZeroExit { code }),
        ExitStatus::Signaled(signal) => Some(Fault::Signal { signal }),
        ExitStatus::TimedOut => Some(Fault::Timeout),
    }
}

/// Whether the fault destroys the output. A nonzero exit keeps what was printed.
fn loses_output(fault: &Fault) -> bool {
    !matches!(fault, Fault::NonZeroExit { .. } | Fault::EarlyExit)
}

pub fn run_full_program(binary: &Path, stdin: &str, cfg: &RunConfig) -> Result<RunResult, RunnerError> {
    let workdir = binary.parent().unwrap_or_else(|| Path::new("."));
    Ok(execute(binary, &[], stdin.as_bytes(), workdir, cfg.exec_limits())?)
}

/// Run `solution_source` on every test of `suite`.
///
/// The returned list always has one entry per test. A compile failure is
/// returned as `RunnerError::Compile`.
pub fn run_suite(
    solution_source: &str,
    suite: &TestSuite,
    problem: &Problem,
    cfg: &RunConfig,
) -> Result<Vec<TestRun>, RunnerError> {
    let scratch = cfg.scratch_dir()?;
    match problem.kind {
        ProblemKind::FullProgram => run_full_program_suite(solution_source, suite, cfg, scratch.path()),
        ProblemKind::FunctionImplementation => {
            run_function_suite(solution_source, suite, problem, cfg, scratch.path())
        }
    }
}

fn run_full_program_suite(
    source: &str,
    suite: &TestSuite,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<Vec<TestRun>, RunnerError> {
    let binary = compile(source, "solution", dir, &cfg.toolchain, &cfg.limits)?;
    suite
        .tests
        .iter()
        .map(|test| {
            let stdin = match &test.payload {
                Payload::Stdin(s) => s,
                Payload::Code(_) => {
                    return Err(RunnerError::Harness(format!(
                        "test {} carries code; full-program tests need stdin input",
                        test.index
                    )))
                }
            };
            let result = run_full_program(&binary, stdin, cfg)?;
            Ok(match fault_of(&result) {
                Some(fault) if loses_output(&fault) => TestRun::lost(fault),
                fault => TestRun {
                    output: Some(OutputText(result.stdout)),
                    fault,
                },
            })
        })
        .collect()
}

fn run_function_suite(
    source: &str,
    suite: &TestSuite,
    problem: &Problem,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<Vec<TestRun>, RunnerError> {
    let n = suite.tests.len();
    let harness = assemble_function_harness(&cfg.template, source, suite, problem.extra_code.as_deref())?;
    if let Some(solution) = &harness.solution_file {
        std::fs::write(dir.join(harness::SOLUTION_FILE), solution)?;
    }
    let binary = compile(&harness.main_source, "harness", dir, &cfg.toolchain, &cfg.limits)?;
    let result = execute(&binary, &[], b"", dir, cfg.exec_limits())?;
    Ok(distribute(&result, suite.separator.as_bytes(), n))
}

/// Map one combined harness run onto `n` tests.
///
/// Tests after the point where the process stopped get `NotReached`; the
/// test that was running when it crashed inherits the crash fault.
pub fn distribute(result: &RunResult, separator: &[u8], n: usize) -> Vec<TestRun> {
    if n == 0 {
        return Vec::new();
    }
    let segments = split_output(&result.stdout, separator);
    if segments.len() > n {
        return vec![TestRun::lost(Fault::SeparatorMismatch); n];
    }
    let fault = fault_of(result);
    let reached = segments.len();
    let mut runs = Vec::with_capacity(n);
    for (pos, seg) in segments.into_iter().enumerate() {
        let last = pos + 1 == reached;
        match (&fault, last) {
            (Some(f), true) if loses_output(f) => runs.push(TestRun::lost(f.clone())),
            (Some(f), true) => runs.push(TestRun {
                output: Some(OutputText(seg)),
                fault: Some(f.clone()),
            }),
            _ => runs.push(TestRun::ok(seg)),
        }
    }
    if reached < n && fault.is_none() {
        // Clean exit part-way through: the last running scope ended the process.
        if let Some(last) = runs.last_mut() {
            last.fault = Some(Fault::EarlyExit);
        }
    }
    runs.resize(n, TestRun::lost(Fault::NotReached));
    runs
}
