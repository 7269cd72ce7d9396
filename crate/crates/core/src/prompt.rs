//! The two-prompt generation pipeline: detailed statement, then tests.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{ChatMessage, ChatRequest, Gateway, GatewayError, ResponseFormat, TokenUsage};
use crate::model::{Problem, ProblemKind, SuiteKind};
use crate::runner::{HarnessTemplate, RunnerError};
use crate::suite::{parse_test_script, MarkerConvention, ParsedTest};

/// Bump when any prompt file changes.
pub const PROMPT_VERSION: u32 = 1;

const DETAILED_SYSTEM: &str = include_str!("../prompts/detailed_system.txt");
const DETAILED_USER: &str = include_str!("../prompts/detailed_user.txt");
const FULL_SYSTEM: &str = include_str!("../prompts/full_system.txt");
const FULL_USER: &str = include_str!("../prompts/full_user.txt");
const FUNCTION_SYSTEM: &str = include_str!("../prompts/function_system.txt");
const FUNCTION_USER: &str = include_str!("../prompts/function_user.txt");
const RETRY_STATEMENT: &str = include_str!("../prompts/retry_statement.txt");
const RETRY_TESTS: &str = include_str!("../prompts/retry_tests.txt");

/// Placeholder left in the template where the model adds its tests.
pub const TESTS_PLACEHOLDER: &str = "    // Add the tests here.\n";

pub const SECTIONS: [&str; 5] = ["Scenario", "Inputs", "Outputs", "Example", "Limits"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("template refers to unknown placeholder `{0}`")]
    UnknownPlaceholder(String),
    #[error("section `{0}` is never closed")]
    UnclosedSection(String),
}

/// Fill `{{name}}` placeholders and keep `{{#name}}..{{/name}}` sections only
/// when `name` has a non-empty value. Values are inserted verbatim.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, RenderError> {
    let lookup = |name: &str| {
        values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| RenderError::UnknownPlaceholder(name.to_owned()))
    };
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str("{{");
            rest = after;
            continue;
        };
        let tag = &after[..end];
        rest = &after[end + 2..];
        if let Some(name) = tag.strip_prefix('#') {
            let close = format!("{{{{/{name}}}}}");
            let body_end = rest
                .find(&close)
                .ok_or_else(|| RenderError::UnclosedSection(name.to_owned()))?;
            let body = &rest[..body_end];
            rest = &rest[body_end + close.len()..];
            if !lookup(name)?.is_empty() {
                out.push_str(&render(body, values)?);
            }
        } else {
            out.push_str(lookup(tag)?);
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetailedStatement {
    pub scenario: String,
    pub inputs: String,
    pub outputs: String,
    pub example: String,
    pub limits: String,
}

impl DetailedStatement {
    /// Plain-text form embedded in the second prompt.
    pub fn to_prompt_text(&self) -> String {
        let fields = [&self.scenario, &self.inputs, &self.outputs, &self.example, &self.limits];
        SECTIONS
            .iter()
            .zip(fields)
            .map(|(name, text)| format!("{name}:\n{}", text.trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatementError {
    #[error("response is not a JSON object: {0}")]
    NotJson(String),
    #[error("response is missing the \"{0}\" section")]
    MissingSection(String),
}

/// Remove a surrounding Markdown code fence, if any.
pub fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(inner) = t.strip_prefix("```") else {
        return t;
    };
    let inner = match inner.find('\n') {
        Some(nl) => &inner[nl + 1..],
        None => inner,
    };
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

pub fn parse_detailed_statement(response: &str) -> Result<DetailedStatement, StatementError> {
    let value: Value = serde_json::from_str(strip_fences(response)).map_err(|e| StatementError::NotJson(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| StatementError::NotJson("top-level value is not an object".into()))?;
    let section = |name: &str| -> Result<String, StatementError> {
        let v = obj
            .iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(name))
            .map(|(_, v)| v);
        let text = match v {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => Some(serde_json::to_string_pretty(other).expect("value serializes")),
        };
        match text {
            Some(t) if name == "Example" || !t.trim().is_empty() => Ok(t),
            _ => Err(StatementError::MissingSection(name.to_owned())),
        }
    };
    Ok(DetailedStatement {
        scenario: section("Scenario")?,
        inputs: section("Inputs")?,
        outputs: section("Outputs")?,
        example: section("Example")?,
        limits: section("Limits")?,
    })
}

/// The model parameters every request is built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model_id: String,
    pub temperature: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            model_id: crate::llm::DEFAULT_MODEL.to_owned(),
            temperature: crate::llm::DEFAULT_TEMPERATURE,
        }
    }
}

impl ModelSettings {
    fn request(&self, format: ResponseFormat, messages: Vec<ChatMessage>) -> ChatRequest {
        let mut r = ChatRequest::new(format, messages);
        r.model_id = self.model_id.clone();
        r.temperature = self.temperature;
        r
    }
}

pub fn build_detailed_statement_prompt(problem: &Problem, model: &ModelSettings) -> ChatRequest {
    let user = render(
        DETAILED_USER,
        &[
            ("statement", problem.statement_text.trim_end()),
            ("solution", problem.reference_solution.trim_end()),
            ("extra_code", problem.extra_code.as_deref().unwrap_or("").trim_end()),
        ],
    )
    .expect("bundled prompt renders");
    model.request(
        ResponseFormat::JsonObject,
        vec![ChatMessage::system(DETAILED_SYSTEM.trim_end()), ChatMessage::user(user)],
    )
}

/// What the model is told about the harness its tests will run in.
#[derive(Debug, Clone, Default)]
pub struct HarnessContract {
    pub template: HarnessTemplate,
}

impl HarnessContract {
    /// The template as shown to the model: LLM-suite headers, extra code,
    /// the `solution.c` include and an empty `main` awaiting tests.
    pub fn skeleton(&self, problem: &Problem) -> Result<String, RunnerError> {
        self.template
            .render_with_tests(SuiteKind::Llm, "", problem.extra_code.as_deref(), TESTS_PLACEHOLDER)
    }
}

pub fn build_testgen_prompt(
    problem: &Problem,
    detailed: &DetailedStatement,
    contract: &HarnessContract,
    model: &ModelSettings,
) -> Result<ChatRequest, RunnerError> {
    let detailed_text = detailed.to_prompt_text();
    let solution = problem.reference_solution.trim_end();
    let (system, user) = match problem.kind {
        ProblemKind::FullProgram => (
            FULL_SYSTEM,
            render(FULL_USER, &[("detailed", &detailed_text), ("solution", solution)]),
        ),
        ProblemKind::FunctionImplementation => {
            let skeleton = contract.skeleton(problem)?;
            (
                FUNCTION_SYSTEM,
                render(
                    FUNCTION_USER,
                    &[("detailed", &detailed_text), ("solution", solution), ("template", skeleton.trim_end())],
                ),
            )
        }
    };
    Ok(model.request(
        ResponseFormat::Text,
        vec![
            ChatMessage::system(system.trim_end()),
            ChatMessage::user(user.expect("bundled prompt renders")),
        ],
    ))
}

/// Body of the fenced block tagged with one of `languages`, or else of the
/// longest fenced block. Returns `None` when the text has no fenced block.
pub fn extract_code_block(text: &str, languages: &[&str]) -> Option<String> {
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut lines = text.split_inclusive('\n');
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        let Some(info) = trimmed.strip_prefix("```") else {
            continue;
        };
        let lang = info.trim().to_ascii_lowercase();
        let mut body = String::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim() == "```" {
                closed = true;
                break;
            }
            body.push_str(inner);
        }
        blocks.push((lang, body));
        if !closed {
            break;
        }
    }
    blocks
        .iter()
        .find(|(lang, _)| languages.contains(&lang.as_str()))
        .or_else(|| blocks.iter().max_by_key(|(_, body)| body.len()))
        .map(|(_, body)| body.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    GeneratorScript,
    TestScript,
}

impl ArtifactKind {
    pub fn for_problem(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::FullProgram => ArtifactKind::GeneratorScript,
            ProblemKind::FunctionImplementation => ArtifactKind::TestScript,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationArtifact {
    pub kind: ArtifactKind,
    pub source_text: String,
    pub detailed: DetailedStatement,
    pub token_usage: TokenUsage,
    pub prompt_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub label: String,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub problem_id: String,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("problem {0} is excluded and gets no generated suite")]
    Excluded(String),
    #[error("{source}")]
    Gateway {
        source: GatewayError,
        transcript: Box<Transcript>,
    },
    #[error("generation failed at {stage}: {reason}")]
    GenerationFailed {
        stage: String,
        reason: String,
        transcript: Box<Transcript>,
    },
    #[error(transparent)]
    Harness(#[from] RunnerError),
}

impl GenerationError {
    pub fn transcript(&self) -> Option<&Transcript> {
        match self {
            GenerationError::Gateway { transcript, .. } | GenerationError::GenerationFailed { transcript, .. } => {
                Some(transcript)
            }
            _ => None,
        }
    }
}

/// Artifact check applied to the second prompt's reply.
pub fn extract_artifact(kind: ProblemKind, response: &str) -> Result<String, String> {
    match kind {
        ProblemKind::FullProgram => {
            let code = extract_code_block(response, &["python", "python3", "py"])
                .ok_or("no fenced code block in the response")?;
            if code.trim().is_empty() {
                return Err("the code block is empty".into());
            }
            if !code.contains("print") {
                return Err("the script never prints the JSON array".into());
            }
            Ok(code)
        }
        ProblemKind::FunctionImplementation => {
            let code = extract_code_block(response, &["c"]).ok_or("no fenced code block in the response")?;
            let tests: Vec<ParsedTest> =
                parse_test_script(&code, &MarkerConvention::default()).map_err(|e| format!("test markers: {e}"))?;
            debug_assert!(!tests.is_empty());
            Ok(code)
        }
    }
}

pub struct Pipeline<'a> {
    pub gateway: &'a Gateway,
    pub model: ModelSettings,
    pub contract: HarnessContract,
}

impl Pipeline<'_> {
    /// Run both prompts, each with at most one corrective retry.
    pub fn generate_suite_source(&self, problem: &Problem) -> Result<GenerationArtifact, GenerationError> {
        if problem.is_excluded() {
            return Err(GenerationError::Excluded(problem.id.clone()));
        }
        let mut transcript = Transcript { problem_id: problem.id.clone(), entries: Vec::new() };
        let mut usage = TokenUsage::default();

        let first = build_detailed_statement_prompt(problem, &self.model);
        let detailed = self.ask(
            first,
            "detailed_statement",
            |text| parse_detailed_statement(text).map_err(|e| e.to_string()),
            |reason| render(RETRY_STATEMENT, &[("reason", reason)]).expect("bundled prompt renders"),
            &mut transcript,
            &mut usage,
        )?;

        let second = build_testgen_prompt(problem, &detailed, &self.contract, &self.model)?;
        let (language, fence) = match problem.kind {
            ProblemKind::FullProgram => ("Python", "python"),
            ProblemKind::FunctionImplementation => ("C", "c"),
        };
        let source_text = self.ask(
            second,
            "test_generation",
            |text| extract_artifact(problem.kind, text),
            |reason| {
                render(RETRY_TESTS, &[("reason", reason), ("language", language), ("fence", fence)])
                    .expect("bundled prompt renders")
            },
            &mut transcript,
            &mut usage,
        )?;

        Ok(GenerationArtifact {
            kind: ArtifactKind::for_problem(problem.kind),
            source_text,
            detailed,
            token_usage: usage,
            prompt_version: PROMPT_VERSION,
        })
    }

    fn ask<T>(
        &self,
        request: ChatRequest,
        label: &str,
        parse: impl Fn(&str) -> Result<T, String>,
        corrective: impl Fn(&str) -> String,
        transcript: &mut Transcript,
        usage: &mut TokenUsage,
    ) -> Result<T, GenerationError> {
        let mut request = request;
        for attempt in 0..2 {
            let reply = match self.gateway.complete_chat(&request, label) {
                Ok(r) => r,
                Err(source) => {
                    transcript.entries.push(TranscriptEntry {
                        label: label.to_owned(),
                        request,
                        response: None,
                        problem: Some(source.to_string()),
                    });
                    return Err(GenerationError::Gateway { source, transcript: Box::new(transcript.clone()) });
                }
            };
            *usage = *usage + reply.usage;
            let parsed = parse(&reply.text);
            transcript.entries.push(TranscriptEntry {
                label: label.to_owned(),
                request: request.clone(),
                response: Some(reply.text.clone()),
                problem: parsed.as_ref().err().cloned(),
            });
            match parsed {
                Ok(v) => return Ok(v),
                Err(reason) if attempt == 0 => {
                    log::warn!("{}: {label} reply rejected ({reason}); retrying once", transcript.problem_id);
                    request.messages.push(ChatMessage::assistant(reply.text));
                    request.messages.push(ChatMessage::user(corrective(&reason)));
                }
                Err(reason) => {
                    return Err(GenerationError::GenerationFailed {
                        stage: label.to_owned(),
                        reason,
                        transcript: Box::new(transcript.clone()),
                    })
                }
            }
        }
        unreachable!("loop returns on the second attempt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Role, ScriptedProvider};
    use crate::model::{InstructorTest, Payload};
    use std::sync::Arc;

    fn problem(kind: ProblemKind, extra: Option<&str>) -> Problem {
        Problem {
            id: "p".into(),
            name: "p".into(),
            kind,
            statement_text: "Write next_letter(c).".into(),
            reference_solution: "char next_letter(char c) { return c == 'z' ? 'a' : c + 1; }\n".into(),
            extra_code: extra.map(str::to_owned),
            instructor_tests: vec![InstructorTest {
                payload: Payload::Code("printf(\"%c\\n\", next_letter('a'));".into()),
                expected_output: "b\n".into(),
            }],
            exclusion_reason: None,
        }
    }

    const STATEMENT_JSON: &str =
        r#"{"Scenario":"s","Inputs":"i","Outputs":"o","Example":"e","Limits":"l"}"#;

    #[test]
    fn renderer() {
        assert_eq!(render("a {{x}} b", &[("x", "1")]).unwrap(), "a 1 b");
        assert_eq!(render("a{{#x}}[{{x}}]{{/x}}b", &[("x", "")]).unwrap(), "ab");
        assert_eq!(render("a{{#x}}[{{x}}]{{/x}}b", &[("x", "y")]).unwrap(), "a[y]b");
        assert_eq!(render("{{x}}", &[("x", "{{y}}")]).unwrap(), "{{y}}");
        assert_eq!(render("{{z}}", &[]), Err(RenderError::UnknownPlaceholder("z".into())));
        assert_eq!(render("{{#x}}", &[("x", "1")]), Err(RenderError::UnclosedSection("x".into())));
    }

    #[test]
    fn statement_prompt_shape() {
        let p = problem(ProblemKind::FunctionImplementation, Some("int helper(void);"));
        let r = build_detailed_statement_prompt(&p, &ModelSettings::default());
        assert_eq!(r.response_format, ResponseFormat::JsonObject);
        assert_eq!(r.messages.len(), 2);
        assert_eq!(r.messages[0].role, Role::System);
        assert!(r.messages[0].content.contains("reflect on the generated sections"));
        let user = &r.messages[1].content;
        let s = user.find("Write next_letter").unwrap();
        let sol = user.find("char next_letter").unwrap();
        let extra = user.find("int helper(void);").unwrap();
        assert!(s < sol && sol < extra);

        let without = build_detailed_statement_prompt(&problem(ProblemKind::FullProgram, None), &ModelSettings::default());
        assert!(!without.messages[1].content.contains("Extra code"));
    }

    #[test]
    fn statement_parsing() {
        let d = parse_detailed_statement(STATEMENT_JSON).unwrap();
        assert_eq!(d.limits, "l");
        let fenced = format!("```json\n{STATEMENT_JSON}\n```");
        assert_eq!(parse_detailed_statement(&fenced).unwrap(), d);
        let lower = r#"{"scenario":"s","INPUTS":"i","outputs":"o","example":"","limits":{"n":"1..10"}}"#;
        let d2 = parse_detailed_statement(lower).unwrap();
        assert_eq!(d2.example, "");
        assert!(d2.limits.contains("1..10"));
        let missing = r#"{"Scenario":"s","Inputs":"i","Outputs":"o","Example":"e"}"#;
        assert_eq!(parse_detailed_statement(missing), Err(StatementError::MissingSection("Limits".into())));
        assert!(matches!(parse_detailed_statement("Sure! Here it is"), Err(StatementError::NotJson(_))));
    }

    #[test]
    fn testgen_prompts() {
        let d = parse_detailed_statement(STATEMENT_JSON).unwrap();
        let full = build_testgen_prompt(&problem(ProblemKind::FullProgram, None), &d, &HarnessContract::default(), &ModelSettings::default()).unwrap();
        assert_eq!(full.response_format, ResponseFormat::Text);
        assert!(full.messages[0].content.contains("has one key \"input\""));
        assert!(full.messages[0].content.contains("100 random tests"));
        assert!(full.messages[1].content.contains("Scenario:\ns"));

        let func = build_testgen_prompt(
            &problem(ProblemKind::FunctionImplementation, Some("#define MAXLEN 64")),
            &d,
            &HarnessContract::default(),
            &ModelSettings::default(),
        )
        .unwrap();
        let user = &func.messages[1].content;
        assert!(user.contains("#define MAXLEN 64"));
        assert!(user.contains("#include \"solution.c\""));
        assert!(user.contains(TESTS_PLACEHOLDER.trim()));
        assert!(func.messages[0].content.contains("<<TEST n BEGIN>>"));
        assert!(func.messages[0].content.contains("iterates 100 times"));
    }

    #[test]
    fn code_blocks() {
        let text = "Edge cases...\n```\nnot it\n```\nScript:\n```python\nprint('[]')\n```\n";
        assert_eq!(extract_code_block(text, &["python"]).unwrap(), "print('[]')\n");
        assert_eq!(extract_code_block("```c\nint x;\n", &["c"]).unwrap(), "int x;\n");
        assert_eq!(extract_code_block("no code", &["c"]), None);
    }

    fn c_script() -> String {
        "```c\nint main(void) {\n    printf(\"<<TEST 1 BEGIN>>\\n\");\n    { printf(\"%c\\n\", next_letter('a')); }\n    printf(\"<<TEST 1 END>>\\n\");\n}\n```".into()
    }

    #[test]
    fn pipeline_happy_path() {
        let provider = Arc::new(ScriptedProvider::texts([STATEMENT_JSON.to_owned(), c_script()]));
        let gw = Gateway::new(Box::new(provider.clone()));
        let pipeline = Pipeline { gateway: &gw, model: ModelSettings::default(), contract: HarnessContract::default() };
        let artifact = pipeline.generate_suite_source(&problem(ProblemKind::FunctionImplementation, None)).unwrap();
        assert_eq!(artifact.kind, ArtifactKind::TestScript);
        assert!(artifact.source_text.contains("<<TEST 1 BEGIN>>"));
        assert_eq!(artifact.token_usage, gw.ledger().total());
        let reqs = provider.requests();
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[0].response_format, ResponseFormat::JsonObject);
        assert_eq!(reqs[1].response_format, ResponseFormat::Text);
    }

    #[test]
    fn prose_reply_is_retried_once_then_fails() {
        let provider = Arc::new(ScriptedProvider::texts([
            STATEMENT_JSON.to_owned(),
            "I cannot write tests.".into(),
            "Still prose.".into(),
        ]));
        let gw = Gateway::new(Box::new(provider.clone()));
        let pipeline = Pipeline { gateway: &gw, model: ModelSettings::default(), contract: HarnessContract::default() };
        let err = pipeline.generate_suite_source(&problem(ProblemKind::FullProgram, None)).unwrap_err();
        match &err {
            GenerationError::GenerationFailed { stage, transcript, .. } => {
                assert_eq!(stage, "test_generation");
                assert_eq!(transcript.entries.len(), 3);
                assert!(transcript.to_json().contains("Still prose."));
            }
            other => panic!("{other:?}"),
        }
        let retry = &provider.requests()[2];
        assert_eq!(retry.messages.len(), 4);
        assert_eq!(retry.messages[2].role, Role::Assistant);
        assert!(retry.messages[3].content.contains("```python"));
    }

    #[test]
    fn retry_can_recover() {
        let provider = ScriptedProvider::texts([
            "{\"Scenario\":\"s\"}".to_owned(),
            STATEMENT_JSON.to_owned(),
            c_script(),
        ]);
        let gw = Gateway::new(Box::new(provider));
        let pipeline = Pipeline { gateway: &gw, model: ModelSettings::default(), contract: HarnessContract::default() };
        assert!(pipeline.generate_suite_source(&problem(ProblemKind::FunctionImplementation, None)).is_ok());
        assert_eq!(gw.ledger().entries().len(), 3);
    }

    #[test]
    fn excluded_problems_are_refused() {
        let mut p = problem(ProblemKind::FullProgram, None);
        p.exclusion_reason = Some("uses files".into());
        let gw = Gateway::new(Box::new(ScriptedProvider::texts(Vec::<String>::new())));
        let pipeline = Pipeline { gateway: &gw, model: ModelSettings::default(), contract: HarnessContract::default() };
        assert!(matches!(pipeline.generate_suite_source(&p), Err(GenerationError::Excluded(_))));
    }
}
