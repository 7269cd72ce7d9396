//! Assembly of the single-process harness used for function problems.
//!
//! Tests become consecutive `{ ... }` scopes inside `main`, separated by a
//! printed separator line. LLM suites compile the solution from a sibling
//! `solution.c` file and reseed `rand()` before every scope.

use std::fmt::Write as _;

use crate::model::{Payload, SuiteKind, TestSuite};

use super::RunnerError;

pub const SOLUTION_FILE: &str = "solution.c";

const DEFAULT_TEMPLATE: &str = include_str!("../../templates/function_harness.c");

const BASE_HEADERS: &[&str] = &["stdio.h", "stdlib.h", "string.h", "math.h"];
const EXTENDED_HEADERS: &[&str] = &["time.h", "limits.h", "ctype.h", "stdbool.h"];

pub const SLOTS: [&str; 4] = ["headers", "extra_code", "solution", "tests"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessTemplate {
    text: String,
}

impl Default for HarnessTemplate {
    fn default() -> Self {
        HarnessTemplate {
            text: DEFAULT_TEMPLATE.to_owned(),
        }
    }
}

impl HarnessTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        HarnessTemplate { text: text.into() }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn fill(&self, values: [(&str, &str); 4]) -> Result<String, RunnerError> {
        for (slot, _) in values {
            if !self.text.contains(&format!("{{{{{slot}}}}}")) {
                return Err(RunnerError::TemplateSlotMissing(slot.to_owned()));
            }
        }
        // Single pass, so slot markers inside substituted code are left alone.
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let hit = after.find("}}").and_then(|end| {
                let name = &after[..end];
                values
                    .iter()
                    .find(|(slot, _)| *slot == name)
                    .map(|(_, value)| (end, *value))
            });
            match hit {
                Some((end, value)) => {
                    out.push_str(value);
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str("{{");
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Render with an arbitrary tests block; used for the prompt-facing skeleton.
    pub fn render_with_tests(
        &self,
        kind: SuiteKind,
        solution: &str,
        extra_code: Option<&str>,
        tests_block: &str,
    ) -> Result<String, RunnerError> {
        let headers = header_block(kind);
        let solution_slot = match kind {
            SuiteKind::Llm => format!("#include \"{SOLUTION_FILE}\""),
            SuiteKind::Instructor => solution.to_owned(),
        };
        self.fill([
            ("headers", &headers),
            ("extra_code", extra_code.unwrap_or("")),
            ("solution", &solution_slot),
            ("tests", tests_block),
        ])
    }
}

/// Files making up one harness build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessSource {
    pub main_source: String,
    /// Contents for `solution.c`, present for LLM suites.
    pub solution_file: Option<String>,
}

pub fn header_block(kind: SuiteKind) -> String {
    let mut headers: Vec<&str> = BASE_HEADERS.to_vec();
    if kind == SuiteKind::Llm {
        headers.extend_from_slice(EXTENDED_HEADERS);
    }
    headers
        .iter()
        .map(|h| format!("#include <{h}>"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn c_string_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '?' => out.push_str("\\?"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// The `main` body: one scope per test, separator prints in between.
pub fn render_tests_block(suite: &TestSuite) -> String {
    let sep_line = c_string_literal(&format!("{}\n", suite.separator));
    let mut block = String::new();
    for (pos, test) in suite.tests.iter().enumerate() {
        if pos > 0 {
            let _ = writeln!(block, "    fputs({sep_line}, stdout);");
            block.push_str("    fflush(stdout);\n");
        }
        if let Some(seed) = suite.seed_for(pos) {
            let _ = writeln!(block, "    srand({seed}u);");
        }
        block.push_str("    {\n");
        block.push_str(test.payload.text());
        if !test.payload.text().ends_with('\n') {
            block.push('\n');
        }
        block.push_str("    }\n");
    }
    block
}

pub fn assemble_function_harness(
    template: &HarnessTemplate,
    solution_source: &str,
    suite: &TestSuite,
    extra_code: Option<&str>,
) -> Result<HarnessSource, RunnerError> {
    if let Some(bad) = suite.tests.iter().find(|t| !matches!(t.payload, Payload::Code(_))) {
        return Err(RunnerError::Harness(format!(
            "test {} carries stdin input; function harnesses need code payloads",
            bad.index
        )));
    }
    let tests = render_tests_block(suite);
    let main_source = template.render_with_tests(suite.kind, solution_source, extra_code, &tests)?;
    let solution_file = match suite.kind {
        SuiteKind::Llm => Some(solution_source.to_owned()),
        SuiteKind::Instructor => None,
    };
    Ok(HarnessSource {
        main_source,
        solution_file,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Separator, Test, TestOrigin};

    fn suite(kind: SuiteKind, n: usize) -> TestSuite {
        let mut s = TestSuite::new("p07", kind, Separator::with_nonce(17943918));
        for i in 0..n {
            s.tests.push(Test::new(
                i,
                Payload::Code(format!("        printf(\"%d\\n\", {i});\n")),
                TestOrigin::Instructor,
            ));
        }
        s
    }

    #[test]
    fn instructor_harness_has_scopes_and_separators() {
        let s = suite(SuiteKind::Instructor, 6);
        let h = assemble_function_harness(&HarnessTemplate::default(), "int f(void){return 1;}", &s, None)
            .unwrap();
        assert_eq!(h.main_source.matches("    {\n").count(), 6);
        assert_eq!(h.main_source.matches("#<ab@17943918#@>#").count(), 5);
        assert!(h.main_source.contains("int f(void){return 1;}"));
        assert!(!h.main_source.contains("solution.c"));
        assert!(!h.main_source.contains("srand"));
        assert!(!h.main_source.contains("<time.h>"));
        assert!(h.solution_file.is_none());
    }

    #[test]
    fn llm_harness_seeds_every_scope() {
        let mut s = suite(SuiteKind::Llm, 7);
        s.seed = Some(761177235);
        let h = assemble_function_harness(&HarnessTemplate::default(), "int f(void){return 1;}", &s, Some("#define WORD_LENGTH 5"))
            .unwrap();
        assert_eq!(h.main_source.matches("srand(761177235u);").count(), 7);
        assert!(h.main_source.contains("#include \"solution.c\""));
        assert!(h.main_source.contains("#include <time.h>"));
        assert!(h.main_source.contains("#include <limits.h>"));
        assert!(h.main_source.contains("#define WORD_LENGTH 5"));
        assert!(!h.main_source.contains("int f(void)"));
        assert_eq!(h.solution_file.as_deref(), Some("int f(void){return 1;}"));
        // every seed call immediately precedes a scope
        for (i, _) in h.main_source.match_indices("srand(761177235u);\n") {
            assert!(h.main_source[i..].lines().nth(1).unwrap().trim() == "{");
        }
    }

    #[test]
    fn zero_tests_gives_empty_main() {
        let s = suite(SuiteKind::Instructor, 0);
        let h = assemble_function_harness(&HarnessTemplate::default(), "", &s, None).unwrap();
        assert!(h.main_source.contains("int main(void)\n{\n\n    return 0;\n}"));
    }

    #[test]
    fn template_without_slot_is_rejected() {
        let t = HarnessTemplate::new("{{headers}}\n{{solution}}\nint main(void){ {{tests}} }");
        let err = assemble_function_harness(&t, "", &suite(SuiteKind::Instructor, 1), None).unwrap_err();
        assert!(matches!(err, RunnerError::TemplateSlotMissing(ref s) if s == "extra_code"));
    }

    #[test]
    fn stdin_payloads_are_refused() {
        let mut s = suite(SuiteKind::Instructor, 1);
        s.tests[0].payload = Payload::Stdin("1\n".into());
        assert!(assemble_function_harness(&HarnessTemplate::default(), "", &s, None).is_err());
    }

    #[test]
    fn slot_markers_in_solution_are_not_expanded() {
        let s = suite(SuiteKind::Instructor, 1);
        let sol = "/* {{tests}} */ int f(void){return 1;}";
        let h = assemble_function_harness(&HarnessTemplate::default(), sol, &s, None).unwrap();
        assert!(h.main_source.contains(sol));
        assert_eq!(h.main_source.matches("    {\n").count(), 1);
    }

    #[test]
    fn separator_literal_is_escaped() {
        assert_eq!(c_string_literal("a\"b\\c\n"), "\"a\\\"b\\\\c\\n\"");
    }
}
