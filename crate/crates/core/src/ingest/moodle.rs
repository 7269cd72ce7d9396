//! CodeRunner questions from Moodle XML quiz exports.

use std::sync::OnceLock;

use regex::Regex;
use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InstructorTest, Payload, Problem, ProblemKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MoodleError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    MalformedXml { line: u32, column: u32, message: String },
    #[error("document root is <{0}>, expected <quiz>")]
    NotAQuiz(String),
}

/// A question that was not turned into a problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub question: String,
    pub kind: WarningKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    UnsupportedQuestionType,
    InvalidQuestion,
    SkippedTest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MoodleImport {
    pub problems: Vec<Problem>,
    pub warnings: Vec<IngestWarning>,
}

pub fn parse_moodle_xml(bytes: &[u8]) -> Result<MoodleImport, MoodleError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let (line, column) = line_col(bytes, e.valid_up_to());
        MoodleError::MalformedXml {
            line,
            column,
            message: format!("invalid UTF-8: {e}"),
        }
    })?;
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        MoodleError::MalformedXml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "quiz" {
        return Err(MoodleError::NotAQuiz(root.tag_name().name().to_owned()));
    }

    let mut import = MoodleImport::default();
    for (ordinal, q) in root
        .children()
        .filter(|n| n.has_tag_name("question"))
        .enumerate()
    {
        let qtype = q.attribute("type").unwrap_or("");
        let label = question_label(q, ordinal);
        match qtype {
            "category" => continue,
            "coderunner" => match parse_coderunner(q, ordinal, &mut import.warnings) {
                Ok(problem) => import.problems.push(problem),
                Err(w) => import.warnings.push(w),
            },
            other => import.warnings.push(IngestWarning {
                question: label,
                kind: WarningKind::UnsupportedQuestionType,
                message: format!("question type `{other}` is not supported"),
            }),
        }
    }
    Ok(import)
}

fn line_col(bytes: &[u8], offset: usize) -> (u32, u32) {
    let before = &bytes[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let col = offset - before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1) + 1;
    (line as u32, col as u32)
}

fn question_label(q: Node, ordinal: usize) -> String {
    field(q, "name")
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("question #{}", ordinal + 1))
}

/// Text of `<name><text>..</text></name>`, or of `<name>` itself when it has
/// no `<text>` child.
fn field(node: Node, name: &str) -> Option<String> {
    let el = node.children().find(|n| n.has_tag_name(name))?;
    Some(element_text(el))
}

fn element_text(el: Node) -> String {
    match el.children().find(|n| n.has_tag_name("text")) {
        Some(t) => concat_text(t),
        None => concat_text(el),
    }
}

fn concat_text(el: Node) -> String {
    el.children()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect()
}

fn parse_coderunner(
    q: Node,
    ordinal: usize,
    warnings: &mut Vec<IngestWarning>,
) -> Result<Problem, IngestWarning> {
    let label = question_label(q, ordinal);
    let invalid = |message: String| IngestWarning {
        question: label.clone(),
        kind: WarningKind::InvalidQuestion,
        message,
    };

    let crtype = field(q, "coderunnertype").unwrap_or_default();
    let kind = match crtype.trim() {
        "c_program" => ProblemKind::FullProgram,
        "c_function" => ProblemKind::FunctionImplementation,
        other => {
            return Err(IngestWarning {
                question: label.clone(),
                kind: WarningKind::UnsupportedQuestionType,
                message: format!("CodeRunner type `{other}` is not a C program or C function question"),
            })
        }
    };

    let reference_solution = field(q, "answer").unwrap_or_default();
    if reference_solution.trim().is_empty() {
        return Err(invalid("question has no reference solution".into()));
    }

    let id = field(q, "idnumber")
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("q{:03}", ordinal + 1));
    let statement_markup = field(q, "questiontext").unwrap_or_default();
    let statement_text = html_to_text(&strip_images(&statement_markup));
    let extra_code = field(q, "globalextra").filter(|s| !s.trim().is_empty());

    let mut instructor_tests = Vec::new();
    let cases = q
        .children()
        .find(|n| n.has_tag_name("testcases"))
        .map(|tc| tc.children().filter(|n| n.has_tag_name("testcase")).collect::<Vec<_>>())
        .unwrap_or_default();
    for (i, case) in cases.into_iter().enumerate() {
        let expected_output = field(case, "expected").unwrap_or_default();
        let payload = match kind {
            ProblemKind::FullProgram => Payload::Stdin(field(case, "stdin").unwrap_or_default()),
            ProblemKind::FunctionImplementation => Payload::Code(field(case, "testcode").unwrap_or_default()),
        };
        if payload.text().trim().is_empty() {
            warnings.push(IngestWarning {
                question: label.clone(),
                kind: WarningKind::SkippedTest,
                message: format!("test {} has an empty payload", i + 1),
            });
            continue;
        }
        instructor_tests.push(InstructorTest {
            payload,
            expected_output,
        });
    }

    let mut problem = Problem {
        id,
        name: label.clone(),
        kind,
        statement_text,
        reference_solution,
        extra_code,
        instructor_tests,
        exclusion_reason: None,
    };
    problem.exclusion_reason = file_use_reason(&problem);
    Ok(problem)
}

/// Why a problem counts as file-based, if it does.
pub fn file_use_reason(problem: &Problem) -> Option<String> {
    static CODE: OnceLock<Regex> = OnceLock::new();
    static PROSE: OnceLock<Regex> = OnceLock::new();
    let code = CODE.get_or_init(|| {
        Regex::new(r"\b(fopen|freopen|fdopen|tmpfile)\s*\(|\bFILE\s*\*").expect("valid regex")
    });
    let prose = PROSE.get_or_init(|| {
        Regex::new(r"(?i)\b(read|reads|reading|write|writes|writing|open|opens|save|saves)\b[^.\n]{0,40}\b(text |binary |input |output )?files?\b|\b(input|output|text|binary)\s+files?\b")
            .expect("valid regex")
    });

    let sources = std::iter::once(("reference solution", problem.reference_solution.as_str()))
        .chain(problem.extra_code.as_deref().map(|c| ("extra code", c)))
        .chain(problem.instructor_tests.iter().map(|t| ("instructor test", t.payload.text())));
    for (place, src) in sources {
        if let Some(m) = code.find(src) {
            return Some(format!("uses files: `{}` in {place}", m.as_str().trim()));
        }
    }
    prose
        .find(&problem.statement_text)
        .map(|m| format!("uses files: statement mentions \"{}\"", m.as_str()))
}

fn image_tag() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // An unterminated tag runs to the end of the fragment.
    RE.get_or_init(|| Regex::new(r"(?i)<\s*/?\s*img\b[^>]*(?:>|$)").expect("valid regex"))
}

/// Remove every `<img>` element from statement markup, keeping the rest in order.
pub fn strip_images(markup: &str) -> String {
    let mut text = markup.to_owned();
    // Removing one tag can join the halves of another (`<im<img>g>`).
    loop {
        let next = image_tag().replace_all(&text, "").into_owned();
        if next == text {
            return text;
        }
        text = next;
    }
}

/// Reduce HTML statement markup to plain text.
pub fn html_to_text(markup: &str) -> String {
    static BREAKS: OnceLock<Regex> = OnceLock::new();
    static TAGS: OnceLock<Regex> = OnceLock::new();
    static BLANKS: OnceLock<Regex> = OnceLock::new();
    let breaks = BREAKS.get_or_init(|| {
        Regex::new(r"(?i)<\s*br\s*/?\s*>|</\s*(p|div|li|h[1-6]|pre|tr|table|ul|ol)\s*>").expect("valid regex")
    });
    let tags = TAGS.get_or_init(|| Regex::new(r"<[^>]*>").expect("valid regex"));
    let blanks = BLANKS.get_or_init(|| Regex::new(r"\n{3,}").expect("valid regex"));

    let with_breaks = breaks.replace_all(markup, "\n");
    let untagged = tags.replace_all(&with_breaks, "");
    let decoded = decode_entities(&untagged);
    let lines: Vec<&str> = decoded.lines().map(str::trim_end).collect();
    blanks.replace_all(lines.join("\n").trim(), "\n\n").into_owned()
}

fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let Some(semi) = rest[..rest.len().min(12)].find(';') else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..semi];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            "nbsp" => Some(' '),
            _ => entity
                .strip_prefix("#x")
                .or_else(|| entity.strip_prefix("#X"))
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                .and_then(char::from_u32),
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scanner-based stripper used as an independent reference.
    fn reference_strip(input: &str) -> String {
        let mut s: Vec<char> = input.chars().collect();
        loop {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            let mut changed = false;
            while i < s.len() {
                if s[i] == '<' {
                    let mut j = i + 1;
                    while j < s.len() && s[j].is_whitespace() {
                        j += 1;
                    }
                    if j < s.len() && s[j] == '/' {
                        j += 1;
                        while j < s.len() && s[j].is_whitespace() {
                            j += 1;
                        }
                    }
                    let word: String = s[j..s.len().min(j + 3)].iter().collect();
                    let after = s.get(j + 3).copied();
                    let boundary = after.is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
                    if word.eq_ignore_ascii_case("img") && boundary {
                        let mut k = j + 3;
                        while k < s.len() && s[k] != '>' {
                            k += 1;
                        }
                        i = (k + 1).min(s.len());
                        changed = true;
                        continue;
                    }
                }
                out.push(s[i]);
                i += 1;
            }
            if !changed {
                return out.into_iter().collect();
            }
            s = out;
        }
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_images("A <img src=x> B"), "A  B");
        assert_eq!(strip_images("no images here"), "no images here");
        assert_eq!(strip_images("a<IMG SRC=\"x.png\"/>b<img>c</img>d"), "abcd");
        assert_eq!(strip_images("x<im<img src=1>g src=2>y"), "xy");
        assert_eq!(strip_images("tail <img src="), "tail ");
        assert_eq!(strip_images("<image>keep</image>"), "<image>keep</image>");
    }

    proptest! {
        #[test]
        fn strip_agrees_with_scanner(
            parts in prop::collection::vec(
                prop_oneof![
                    Just("<img src=x>".to_owned()),
                    Just("<IMG>".to_owned()),
                    Just("< img alt='a'/>".to_owned()),
                    Just("</img>".to_owned()),
                    Just("<im".to_owned()),
                    Just("g>".to_owned()),
                    Just("<p>".to_owned()),
                    Just("<imgx>".to_owned()),
                    "[a-z <>/=]{0,6}",
                ],
                0..12,
            )
        ) {
            let markup: String = parts.concat();
            let stripped = strip_images(&markup);
            prop_assert_eq!(&stripped, &reference_strip(&markup));
            prop_assert!(!image_tag().is_match(&stripped));
        }
    }

    #[test]
    fn html_reduced_to_text() {
        let t = html_to_text("<p>Read two words &amp; print.</p><p>Use&nbsp;<code>a &lt; b</code></p>");
        assert_eq!(t, "Read two words & print.\nUse a < b");
        assert_eq!(decode_entities("&#65;&#x42; &bogus; & x"), "AB &bogus; & x");
    }

    const QUIZ: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<quiz>
  <question type="category"><category><text>$course$/Week 3</text></category></question>
  <question type="coderunner">
    <name><text>Times two</text></name>
    <questiontext format="html"><text><![CDATA[<p>Read an integer <img src="@@PLUGINFILE@@/x.png"> and print it doubled.</p>]]></text></questiontext>
    <idnumber>p11</idnumber>
    <coderunnertype>c_program</coderunnertype>
    <answer><![CDATA[#include <stdio.h>
int main(void) { int n; scanf("%d", &n); printf("%d x 2 = %d\n", n, 2 * n); return 0; }
]]></answer>
    <testcases>
      <testcase><testcode><text></text></testcode><stdin><text>7
</text></stdin><expected><text>7 x 2 = 14
</text></expected></testcase>
      <testcase><testcode><text></text></testcode><stdin><text>0
</text></stdin><expected><text>0 x 2 = 0
</text></expected></testcase>
      <testcase><testcode><text></text></testcode><stdin><text>-3
</text></stdin><expected><text>-3 x 2 = -6
</text></expected></testcase>
    </testcases>
  </question>
  <question type="multichoice"><name><text>Quiz</text></name></question>
  <question type="coderunner">
    <name><text>Line count</text></name>
    <questiontext format="html"><text>Count the lines of the input file data.txt.</text></questiontext>
    <coderunnertype>c_function</coderunnertype>
    <answer>int count(const char *p) { FILE *f = fopen(p, "r"); return f != NULL; }</answer>
    <testcases><testcase><testcode><text>printf("%d\n", count("data.txt"));</text></testcode><expected><text>1</text></expected></testcase></testcases>
  </question>
</quiz>"#;

    #[test]
    fn full_program_question() {
        let import = parse_moodle_xml(QUIZ.as_bytes()).unwrap();
        assert_eq!(import.problems.len(), 2);
        let p = &import.problems[0];
        assert_eq!(p.id, "p11");
        assert_eq!(p.name, "Times two");
        assert_eq!(p.kind, ProblemKind::FullProgram);
        assert_eq!(p.statement_text, "Read an integer  and print it doubled.");
        assert!(p.reference_solution.starts_with("#include <stdio.h>"));
        assert_eq!(p.extra_code, None);
        assert_eq!(p.instructor_tests.len(), 3);
        assert_eq!(p.instructor_tests[0].payload, Payload::Stdin("7\n".into()));
        assert_eq!(p.instructor_tests[0].expected_output, "7 x 2 = 14\n");
        assert!(!p.is_excluded());
        assert_eq!(import.warnings.len(), 1);
        assert_eq!(import.warnings[0].kind, WarningKind::UnsupportedQuestionType);
    }

    #[test]
    fn file_question_is_flagged() {
        let import = parse_moodle_xml(QUIZ.as_bytes()).unwrap();
        let p = &import.problems[1];
        assert_eq!(p.id, "q004");
        assert_eq!(p.kind, ProblemKind::FunctionImplementation);
        assert!(p.is_excluded());
        assert!(p.exclusion_reason.as_deref().unwrap().contains("FILE *"));
    }

    #[test]
    fn statement_prose_alone_flags_files() {
        let mut p = parse_moodle_xml(QUIZ.as_bytes()).unwrap().problems.remove(0);
        assert_eq!(file_use_reason(&p), None);
        p.statement_text = "Write the results to an output file.".into();
        assert!(file_use_reason(&p).is_some());
        p.statement_text = "Print the profile of the user.".into();
        assert_eq!(file_use_reason(&p), None);
    }

    #[test]
    fn empty_quiz() {
        let import = parse_moodle_xml(b"<quiz></quiz>").unwrap();
        assert!(import.problems.is_empty());
        assert!(import.warnings.is_empty());
    }

    #[test]
    fn malformed_reports_position() {
        let err = parse_moodle_xml(b"<quiz>\n  <question type=\"coderunner\">\n</quiz>").unwrap_err();
        match err {
            MoodleError::MalformedXml { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_moodle_xml(b"<html/>"), Err(MoodleError::NotAQuiz(_))));
    }

    #[test]
    fn parsing_is_deterministic() {
        assert_eq!(parse_moodle_xml(QUIZ.as_bytes()), parse_moodle_xml(QUIZ.as_bytes()));
    }
}
