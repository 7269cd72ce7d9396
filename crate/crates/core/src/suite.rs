//! Turning generation artifacts and instructor tests into finalized suites.

use std::fmt::Write as _;
use std::io;

use log::warn;
use rand::Rng;
use regex::Regex;
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    OutputText, Payload, Problem, ProblemKind, RejectedTest, Separator, SuiteKind, Test,
    TestOrigin, TestSuite,
};
use crate::prompt::{ArtifactKind, GenerationArtifact};
use crate::runner::{
    compile::resolve_program, execute, run_suite, ExecLimits, ExitStatus, RunConfig, RunnerError,
    TestRun,
};

/// Number of fresh separators tried before giving up on a collision.
const SEPARATOR_ATTEMPTS: usize = 8;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("script interpreter `{0}` not found")]
    InterpreterMissing(String),
    #[error("generator script failed ({status}):\n{stderr}")]
    GeneratorFailure { status: String, stderr: String },
    #[error("generator output does not match the test schema: {0}")]
    SchemaError(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScriptParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("reference solution does not compile:\n{0}")]
    ReferenceCompileError(String),
    #[error("harness error: {0}")]
    Harness(String),
    #[error("no separator free of collisions after {0} attempts")]
    SeparatorCollision(usize),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("test script: {0}")]
    Script(#[from] ScriptParseError),
}

impl From<RunnerError> for SuiteError {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::Compile(diag) => SuiteError::ReferenceCompileError(diag),
            other => SuiteError::Harness(other.to_string()),
        }
    }
}

/// Execute a generator script and read its stdout as `[{"input": "..."}, ...]`.
pub fn run_generator_script(script: &str, cfg: &RunConfig) -> Result<Vec<String>, GeneratorError> {
    let interpreter = &cfg.interpreter;
    let program = resolve_program(&interpreter.command)
        .ok_or_else(|| GeneratorError::InterpreterMissing(interpreter.command.clone()))?;
    let scratch = cfg.scratch_dir()?;
    let script_path = scratch.path().join("generate_tests.py");
    std::fs::write(&script_path, script)?;
    let mut args = interpreter.args.clone();
    args.push(script_path.display().to_string());

    let result = execute(
        &program,
        &args,
        b"",
        scratch.path(),
        ExecLimits {
            timeout: cfg.limits.generator_timeout,
            memory_bytes: None,
            output_cap: 64 * 1024 * 1024,
        },
    )
    .map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => GeneratorError::InterpreterMissing(interpreter.command.clone()),
        _ => GeneratorError::Io(e),
    })?;

    if !result.success() {
        let status = match result.status {
            _ if result.output_limited => "output limit exceeded".to_owned(),
            ExitStatus::Exited(code) => format!("exit status {code}"),
            ExitStatus::Signaled(sig) => format!("signal {sig}"),
            ExitStatus::TimedOut => format!("timed out after {:?}", cfg.limits.generator_timeout),
        };
        return Err(GeneratorError::GeneratorFailure {
            status,
            stderr: String::from_utf8_lossy(&result.stderr).into_owned(),
        });
    }
    parse_generator_output(&result.stdout)
}

pub fn parse_generator_output(stdout: &[u8]) -> Result<Vec<String>, GeneratorError> {
    let value: Value = serde_json::from_slice(stdout)
        .map_err(|e| GeneratorError::SchemaError(format!("stdout is not JSON: {e}")))?;
    let items = value
        .as_array()
        .ok_or_else(|| GeneratorError::SchemaError("top-level value is not an array".into()))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let obj = item
                .as_object()
                .ok_or_else(|| GeneratorError::SchemaError(format!("element {i} is not an object")))?;
            if obj.len() != 1 || !obj.contains_key("input") {
                let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
                return Err(GeneratorError::SchemaError(format!(
                    "element {i} must have exactly the key \"input\", found {keys:?}"
                )));
            }
            obj["input"]
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| GeneratorError::SchemaError(format!("element {i}: \"input\" is not a string")))
        })
        .collect()
}

/// Begin/end output statements that bracket each test in a generated script.
#[derive(Debug, Clone)]
pub struct MarkerConvention {
    begin: Regex,
    end: Regex,
}

impl Default for MarkerConvention {
    fn default() -> Self {
        MarkerConvention {
            begin: Regex::new(r"<<TEST (\d+) BEGIN>>").expect("valid regex"),
            end: Regex::new(r"<<TEST (\d+) END>>").expect("valid regex"),
        }
    }
}

impl MarkerConvention {
    pub fn begin_text(n: usize) -> String {
        format!("<<TEST {n} BEGIN>>")
    }

    pub fn end_text(n: usize) -> String {
        format!("<<TEST {n} END>>")
    }

    pub fn begin_statement(n: usize) -> String {
        format!("    printf(\"{}\\n\");\n", Self::begin_text(n))
    }

    pub fn end_statement(n: usize) -> String {
        format!("    printf(\"{}\\n\");\n", Self::end_text(n))
    }

    pub fn contains_marker(&self, text: &str) -> bool {
        self.begin.is_match(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTest {
    pub number: usize,
    pub payload: String,
    pub origin: TestOrigin,
}

/// A scope that calls `rand()` inside a loop is a random-test block.
pub fn classify_block(code: &str) -> TestOrigin {
    static PATTERNS: std::sync::OnceLock<(Regex, Regex)> = std::sync::OnceLock::new();
    let (rand_call, looped) = PATTERNS.get_or_init(|| {
        (
            Regex::new(r"\brand\s*\(").expect("valid regex"),
            Regex::new(r"\b(for|while)\s*\(").expect("valid regex"),
        )
    });
    if rand_call.is_match(code) && looped.is_match(code) {
        TestOrigin::Random
    } else {
        TestOrigin::EdgeCase
    }
}

/// Extract the code between each begin/end marker pair, byte for byte.
pub fn parse_test_script(
    script: &str,
    markers: &MarkerConvention,
) -> Result<Vec<ParsedTest>, ScriptParseError> {
    let mut tests = Vec::new();
    let mut open: Option<(usize, usize, String)> = None; // (number, begin line, body)
    let mut last_number: Option<usize> = None;
    for (idx, line) in script.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let begin = markers.begin.captures(line).map(|c| c[1].parse::<usize>());
        let end = markers.end.captures(line).map(|c| c[1].parse::<usize>());
        match (begin, end) {
            (Some(_), Some(_)) => {
                return Err(ScriptParseError {
                    line: line_no,
                    message: "begin and end markers on the same line".into(),
                })
            }
            (Some(n), None) => {
                let n = n.map_err(|e| ScriptParseError {
                    line: line_no,
                    message: format!("bad test number: {e}"),
                })?;
                if let Some((open_n, open_line, _)) = &open {
                    return Err(ScriptParseError {
                        line: line_no,
                        message: format!("test {n} begins before test {open_n} (line {open_line}) ends"),
                    });
                }
                if last_number.is_some_and(|prev| n <= prev) {
                    return Err(ScriptParseError {
                        line: line_no,
                        message: format!("test {n} is out of order"),
                    });
                }
                open = Some((n, line_no, String::new()));
            }
            (None, Some(n)) => {
                let n = n.map_err(|e| ScriptParseError {
                    line: line_no,
                    message: format!("bad test number: {e}"),
                })?;
                match open.take() {
                    Some((open_n, _, body)) if open_n == n => {
                        tests.push(ParsedTest {
                            number: n,
                            origin: classify_block(&body),
                            payload: body,
                        });
                        last_number = Some(n);
                    }
                    Some((open_n, open_line, _)) => {
                        return Err(ScriptParseError {
                            line: line_no,
                            message: format!("end of test {n} while test {open_n} (line {open_line}) is open"),
                        })
                    }
                    None => {
                        return Err(ScriptParseError {
                            line: line_no,
                            message: format!("end of test {n} without a matching begin"),
                        })
                    }
                }
            }
            (None, None) => {
                if let Some((_, _, body)) = open.as_mut() {
                    body.push_str(line);
                }
            }
        }
    }
    if let Some((n, line, _)) = open {
        return Err(ScriptParseError {
            line,
            message: format!("test {n} is never closed"),
        });
    }
    if tests.is_empty() {
        return Err(ScriptParseError {
            line: 0,
            message: "no marked tests found".into(),
        });
    }
    Ok(tests)
}

/// Render payloads back into a marked test section (canonical statements).
pub fn render_test_section(tests: &[ParsedTest]) -> String {
    let mut out = String::new();
    for t in tests {
        out.push_str(&MarkerConvention::begin_statement(t.number));
        out.push_str(&t.payload);
        out.push_str(&MarkerConvention::end_statement(t.number));
    }
    out
}

/// Options for materializing a suite against the reference solution.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaterializeOptions {
    /// Regenerate the separator with this RNG seed on collision (deterministic);
    /// `None` draws from the thread RNG.
    pub separator_seed: Option<u64>,
    /// Give every test of a function-problem LLM suite its own fixed seed.
    pub per_test_seeds: bool,
}

/// Run the reference on every test, record expected outputs and reject any
/// test the reference crashes on (nonzero exit, signal, timeout, output limit).
pub fn materialize_expected_outputs(
    mut suite: TestSuite,
    problem: &Problem,
    cfg: &RunConfig,
) -> Result<TestSuite, SuiteError> {
    materialize_with(&mut suite, problem, cfg, MaterializeOptions::default())?;
    Ok(suite)
}

pub fn materialize_with(
    suite: &mut TestSuite,
    problem: &Problem,
    cfg: &RunConfig,
    opts: MaterializeOptions,
) -> Result<(), SuiteError> {
    let mut rng: Box<dyn rand::RngCore> = match opts.separator_seed {
        Some(seed) => Box::new(<rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(seed)),
        None => Box::new(rand::thread_rng()),
    };
    for _ in 0..SEPARATOR_ATTEMPTS {
        for t in &mut suite.tests {
            t.expected_output = None;
        }
        let outputs = run_reference(suite, problem, cfg)?;
        let collides = outputs
            .iter()
            .any(|o| o.contains(suite.separator.as_bytes()));
        if collides {
            let fresh = Separator::with_nonce(rng.gen_range(0..100_000_000));
            warn!(
                "{}: expected output contains separator {}; retrying with {}",
                suite.problem_id, suite.separator, fresh
            );
            suite.separator = fresh;
            continue;
        }
        for (t, out) in suite.tests.iter_mut().zip(outputs) {
            t.expected_output = Some(out);
        }
        return Ok(());
    }
    Err(SuiteError::SeparatorCollision(SEPARATOR_ATTEMPTS))
}

/// Returns one output per surviving test; rejected tests move to `suite.rejected`.
fn run_reference(
    suite: &mut TestSuite,
    problem: &Problem,
    cfg: &RunConfig,
) -> Result<Vec<OutputText>, SuiteError> {
    match problem.kind {
        ProblemKind::FullProgram => {
            let runs = run_suite(&problem.reference_solution, suite, problem, cfg)?;
            let mut kept = Vec::new();
            let mut outputs = Vec::new();
            for (test, run) in std::mem::take(&mut suite.tests).into_iter().zip(runs) {
                match run_fault(&run) {
                    Some(reason) => suite.rejected.push(RejectedTest { test, reason }),
                    None => {
                        kept.push(test);
                        outputs.push(run.output.unwrap_or_default());
                    }
                }
            }
            suite.tests = kept;
            Ok(outputs)
        }
        ProblemKind::FunctionImplementation => loop {
            // One harness process runs every test; a crash hides everything after
            // it, so drop the crashing test and run again until the run is clean.
            let runs = run_suite(&problem.reference_solution, suite, problem, cfg)?;
            match runs.iter().position(|r| r.fault.is_some()) {
                None => {
                    return Ok(runs.into_iter().map(|r| r.output.unwrap_or_default()).collect())
                }
                Some(pos) => {
                    let reason = run_fault(&runs[pos]).unwrap_or_default();
                    let test = suite.tests.remove(pos);
                    suite.rejected.push(RejectedTest { test, reason });
                }
            }
        },
    }
}

fn run_fault(run: &TestRun) -> Option<String> {
    run.fault
        .as_ref()
        .map(|f| format!("reference solution crashed: {f}"))
}

/// Build the instructor suite from the problem's exported tests and regenerate
/// every expected output from the reference solution.
pub fn regenerate_instructor_outputs(
    problem: &Problem,
    separator: Separator,
    cfg: &RunConfig,
) -> Result<TestSuite, SuiteError> {
    regenerate_instructor_outputs_with(problem, separator, cfg, MaterializeOptions::default())
}

pub fn regenerate_instructor_outputs_with(
    problem: &Problem,
    separator: Separator,
    cfg: &RunConfig,
    opts: MaterializeOptions,
) -> Result<TestSuite, SuiteError> {
    let mut suite = TestSuite::new(&problem.id, SuiteKind::Instructor, separator);
    if problem.instructor_tests.is_empty() {
        warn!("{}: no instructor tests; instructor suite is empty", problem.id);
    }
    for (i, it) in problem.instructor_tests.iter().enumerate() {
        let mut t = Test::new(i, it.payload.clone(), TestOrigin::Instructor);
        t.original_expected = Some(it.expected_output.clone());
        suite.tests.push(t);
    }
    materialize_with(&mut suite, problem, cfg, opts)?;
    Ok(suite)
}

/// Unmaterialized LLM-suite tests from generator payloads (full-program problems).
///
/// Generators emit the edge cases first and then the random tests, so when more
/// than `random_count` tests arrive the trailing `random_count` are marked random.
pub fn tests_from_generator(inputs: Vec<String>, random_count: usize) -> Vec<Test> {
    let n = inputs.len();
    let first_random = if n > random_count { n - random_count } else { n };
    inputs
        .into_iter()
        .enumerate()
        .map(|(i, input)| {
            let origin = if i >= first_random {
                TestOrigin::Random
            } else {
                TestOrigin::EdgeCase
            };
            Test::new(i, Payload::Stdin(input), origin)
        })
        .collect()
}

pub fn tests_from_script(parsed: Vec<ParsedTest>) -> Vec<Test> {
    parsed
        .into_iter()
        .enumerate()
        .map(|(i, p)| Test::new(i, Payload::Code(p.payload), p.origin))
        .collect()
}

/// Random tests a generator script is asked to append after the edge cases.
pub const GENERATOR_RANDOM_TESTS: usize = 100;

/// Turn a generation artifact into a finalized LLM suite.
///
/// Generator scripts are executed and their inputs become stdin tests; test
/// scripts are split at their markers into code tests that all start from
/// `seed`. Expected outputs then come from the reference solution.
pub fn build_llm_suite(
    problem: &Problem,
    artifact: &GenerationArtifact,
    seed: u32,
    separator: Separator,
    cfg: &RunConfig,
    opts: MaterializeOptions,
) -> Result<TestSuite, SuiteError> {
    let mut suite = TestSuite::new(&problem.id, SuiteKind::Llm, separator);
    match (problem.kind, artifact.kind) {
        (ProblemKind::FullProgram, ArtifactKind::GeneratorScript) => {
            let inputs = run_generator_script(&artifact.source_text, cfg)?;
            suite.tests = tests_from_generator(inputs, GENERATOR_RANDOM_TESTS);
        }
        (ProblemKind::FunctionImplementation, ArtifactKind::TestScript) => {
            let parsed = parse_test_script(&artifact.source_text, &MarkerConvention::default())?;
            suite.tests = tests_from_script(parsed);
            suite.seed = Some(seed);
            suite.per_test_seeds = opts.per_test_seeds;
        }
        (kind, artifact_kind) => {
            return Err(SuiteError::Harness(format!(
                "a {artifact_kind:?} artifact cannot build a suite for a {kind:?} problem"
            )))
        }
    }
    if suite.tests.is_empty() {
        warn!("{}: the generated suite has no tests", problem.id);
    }
    materialize_with(&mut suite, problem, cfg, opts)?;
    Ok(suite)
}

/// Human-readable one-line summary of a suite.
pub fn describe(suite: &TestSuite) -> String {
    let mut s = String::new();
    let edge = suite.tests.iter().filter(|t| t.origin == TestOrigin::EdgeCase).count();
    let random = suite.tests.iter().filter(|t| t.origin == TestOrigin::Random).count();
    let _ = write!(
        s,
        "{} suite for {}: {} tests ({} edge-case, {} random), {} rejected",
        suite.kind,
        suite.problem_id,
        suite.tests.len(),
        edge,
        random,
        suite.rejected.len()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn generator_schema() {
        let ok = parse_generator_output(br#"[{"input":"m\n"},{"input":"z\n"}]"#).unwrap();
        assert_eq!(ok, vec!["m\n".to_owned(), "z\n".to_owned()]);
        assert!(matches!(
            parse_generator_output(br#"[{"input":"a","note":"x"}]"#),
            Err(GeneratorError::SchemaError(_))
        ));
        assert!(matches!(parse_generator_output(br#"{"input":"a"}"#), Err(GeneratorError::SchemaError(_))));
        assert!(matches!(parse_generator_output(br#"[{"input":5}]"#), Err(GeneratorError::SchemaError(_))));
        assert!(matches!(parse_generator_output(b"not json"), Err(GeneratorError::SchemaError(_))));
        assert!(parse_generator_output(b"[]").unwrap().is_empty());
    }

    fn block(n: usize, body: &str) -> String {
        format!(
            "{}{}{}",
            MarkerConvention::begin_statement(n),
            body,
            MarkerConvention::end_statement(n)
        )
    }

    #[test]
    fn seven_blocks_last_random() {
        let mut script = String::from("#include \"solution.c\"\nint main(void) {\n");
        for n in 1..=6 {
            script.push_str(&block(n, &format!("    {{\n        printf(\"%d\\n\", f({n}));\n    }}\n")));
        }
        script.push_str(&block(
            7,
            "    {\n        for (int i = 0; i < 100; i++) {\n            int x = rand() % 50;\n            printf(\"%d\\n\", f(x));\n        }\n    }\n",
        ));
        script.push_str("    return 0;\n}\n");
        let tests = parse_test_script(&script, &MarkerConvention::default()).unwrap();
        assert_eq!(tests.len(), 7);
        assert!(tests[..6].iter().all(|t| t.origin == TestOrigin::EdgeCase));
        assert_eq!(tests[6].origin, TestOrigin::Random);
        assert!(tests[6].payload.contains("i < 100"));
        assert_eq!(tests[0].payload, "    {\n        printf(\"%d\\n\", f(1));\n    }\n");
    }

    #[test]
    fn malformed_markers() {
        let m = MarkerConvention::default();
        let nested = format!(
            "{}{}x;\n{}{}",
            MarkerConvention::begin_statement(1),
            MarkerConvention::begin_statement(2),
            MarkerConvention::end_statement(2),
            MarkerConvention::end_statement(1)
        );
        let err = parse_test_script(&nested, &m).unwrap_err();
        assert_eq!(err.line, 2);

        let swapped = format!("{}x;\n{}", MarkerConvention::end_statement(1), MarkerConvention::begin_statement(1));
        assert_eq!(parse_test_script(&swapped, &m).unwrap_err().line, 1);

        let mismatched = format!("{}x;\n{}", MarkerConvention::begin_statement(1), MarkerConvention::end_statement(2));
        assert_eq!(parse_test_script(&mismatched, &m).unwrap_err().line, 3);

        let unclosed = MarkerConvention::begin_statement(1);
        assert!(parse_test_script(&unclosed, &m).is_err());

        let backwards = format!("{}{}", block(2, "a;\n"), block(1, "b;\n"));
        assert!(parse_test_script(&backwards, &m).is_err());

        assert!(parse_test_script("int main(){}", &m).is_err());
    }

    proptest! {
        #[test]
        fn parse_then_render_is_byte_exact(
            bodies in prop::collection::vec("[ -~]{0,30}(\n[ -~]{0,30}){0,3}\n", 1..8)
        ) {
            let bodies: Vec<String> = bodies
                .into_iter()
                .filter(|b| !b.contains("<<TEST"))
                .collect();
            prop_assume!(!bodies.is_empty());
            let section: String = bodies.iter().enumerate().map(|(i, b)| block(i + 1, b)).collect();
            let parsed = parse_test_script(&section, &MarkerConvention::default()).unwrap();
            prop_assert_eq!(parsed.len(), bodies.len());
            prop_assert_eq!(render_test_section(&parsed), section);
        }
    }

    #[test]
    fn generator_origins() {
        let tests = tests_from_generator((0..103).map(|i| i.to_string()).collect(), 100);
        assert_eq!(tests.iter().filter(|t| t.origin == TestOrigin::EdgeCase).count(), 3);
        assert_eq!(tests[3].origin, TestOrigin::Random);
        let few = tests_from_generator(vec!["a".into(), "b".into()], 100);
        assert!(few.iter().all(|t| t.origin == TestOrigin::EdgeCase));
    }
}
