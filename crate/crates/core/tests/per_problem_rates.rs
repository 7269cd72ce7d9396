//! Rebuild a full evaluation corpus from published per-problem counts and
//! check the per-problem percentages, their ordering and both confusion
//! matrices.

use chrono::{TimeZone, Utc};
use testforge::evaluator::{
    annotate, evaluate, Annotation, ConfusionMatrix, MismatchCause, QuadrantRecord, Resolved,
};
use testforge::model::Grade;

/// (problem, compiling solutions without Other mismatches)
const SOLUTIONS: [(u32, u64); 28] = [
    (1, 1851), (2, 841), (3, 887), (4, 687), (5, 458), (6, 1735), (7, 1114),
    (8, 908), (9, 1398), (10, 1135), (11, 991), (12, 846), (13, 910), (14, 0),
    (15, 951), (16, 976), (17, 1428), (18, 531), (19, 186), (20, 1054), (21, 0),
    (22, 689), (23, 1901), (24, 811), (25, 1111), (26, 555), (27, 552), (28, 1230),
];
/// LLM suite accepted a solution that is actually invalid.
const LLM_FALSE_ACCEPT: [(u32, u64); 6] = [(7, 1), (9, 3), (10, 4), (17, 9), (22, 4), (26, 2)];
/// LLM suite rejected a solution that is actually valid.
const LLM_FALSE_REJECT: [(u32, u64); 3] = [(2, 363), (10, 10), (16, 861)];
/// Instructor suite accepted a solution that is actually invalid.
const INSTRUCTOR_FALSE_ACCEPT: [(u32, u64); 15] = [
    (1, 23), (2, 17), (3, 1), (6, 789), (10, 19), (12, 26), (17, 131), (19, 83),
    (20, 6), (22, 30), (23, 8), (24, 4), (25, 7), (26, 6), (28, 110),
];
const BOTH_VALID: u64 = 15907;
const OTHER: u64 = 1051;
const NO_COMPILE: u64 = 6962;

fn count(table: &[(u32, u64)], p: u32) -> u64 {
    table.iter().find(|(q, _)| *q == p).map_or(0, |(_, n)| *n)
}

fn resolve(r: &mut QuadrantRecord, cause: MismatchCause, v: Resolved) {
    let a = Annotation {
        cause,
        resolved_validity: v,
        note: String::new(),
        annotator: "t".into(),
        timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
    };
    annotate(r, a).unwrap();
}

fn corpus() -> Vec<QuadrantRecord> {
    let mut out = Vec::new();
    let mut valid_left = BOTH_VALID;
    let mut seq = 0u64;
    let mut push = |out: &mut Vec<QuadrantRecord>, p: u32, llm: Grade, instr: Grade| -> usize {
        seq += 1;
        out.push(QuadrantRecord::new(&format!("{p:02}"), &format!("s{seq}"), llm, instr));
        out.len() - 1
    };
    for (p, n) in SOLUTIONS {
        let (fa, fr, ia) = (count(&LLM_FALSE_ACCEPT, p), count(&LLM_FALSE_REJECT, p), count(&INSTRUCTOR_FALSE_ACCEPT, p));
        for _ in 0..n - fa - fr - ia {
            if valid_left > 0 {
                valid_left -= 1;
                push(&mut out, p, Grade::Pass, Grade::Pass);
            } else {
                push(&mut out, p, Grade::Fail, Grade::Fail);
            }
        }
        for _ in 0..fa {
            let i = push(&mut out, p, Grade::Pass, Grade::Fail);
            resolve(&mut out[i], MismatchCause::LlmMismatch, Resolved::Invalid);
        }
        for _ in 0..fr {
            let i = push(&mut out, p, Grade::Fail, Grade::Pass);
            resolve(&mut out[i], MismatchCause::LlmMismatch, Resolved::Valid);
        }
        for _ in 0..ia {
            let i = push(&mut out, p, Grade::Fail, Grade::Pass);
            resolve(&mut out[i], MismatchCause::InstructorMismatch, Resolved::Invalid);
        }
    }
    for k in 0..OTHER {
        let i = push(&mut out, 2 + (k % 3) as u32, Grade::Pass, Grade::Fail);
        resolve(&mut out[i], MismatchCause::OtherMismatch, Resolved::Invalid);
    }
    for k in 0..NO_COMPILE {
        let grades = [(Grade::NoCompile, Grade::NoCompile), (Grade::NoCompile, Grade::Pass), (Grade::Fail, Grade::NoCompile)];
        let (l, i) = grades[(k % 3) as usize];
        push(&mut out, 1 + (k % 28) as u32, l, i);
    }
    out
}

#[test]
fn per_problem_rows_match_published_percentages() {
    let records = corpus();
    assert_eq!(records.len(), 33749);
    let report = evaluate(&records, false).unwrap();

    let expected: [(&str, &str, &str, &str); 18] = [
        ("07", "99.91", "0.09", "0.00"),
        ("03", "99.89", "0.00", "0.11"),
        ("09", "99.79", "0.21", "0.00"),
        ("23", "99.58", "0.00", "0.42"),
        ("24", "99.51", "0.00", "0.49"),
        ("20", "99.43", "0.00", "0.57"),
        ("25", "99.37", "0.00", "0.63"),
        ("01", "98.76", "0.00", "1.24"),
        ("26", "98.56", "0.36", "1.08"),
        ("10", "97.09", "1.23", "1.67"),
        ("12", "96.93", "0.00", "3.07"),
        ("22", "95.07", "0.58", "4.35"),
        ("28", "91.06", "0.00", "8.94"),
        ("17", "90.20", "0.63", "9.17"),
        ("19", "55.38", "0.00", "44.62"),
        ("02", "54.82", "43.16", "2.02"),
        ("06", "54.52", "0.00", "45.48"),
        ("16", "11.78", "88.22", "0.00"),
    ];
    let rows = &report.per_problem;
    // Problems without any compiling solution have no row.
    assert_eq!(rows.len(), 26);
    let perfect = rows.len() - expected.len();
    for row in &rows[..perfect] {
        assert_eq!(
            (row.match_pct.as_str(), row.llm_mismatch_pct.as_str(), row.instructor_mismatch_pct.as_str()),
            ("100.00", "0.00", "0.00"),
            "problem {}",
            row.problem_id
        );
    }
    // Ties at 100% are ordered by solution count, largest first.
    let counts: Vec<u64> = rows[..perfect].iter().map(|r| r.n).collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    for (row, (pid, m, l, i)) in rows[perfect..].iter().zip(expected) {
        assert_eq!(row.problem_id, pid);
        assert_eq!(
            (row.match_pct.as_str(), row.llm_mismatch_pct.as_str(), row.instructor_mismatch_pct.as_str()),
            (m, l, i),
            "problem {pid}"
        );
    }
}

#[test]
fn corpus_totals_give_both_confusion_matrices() {
    let report = evaluate(&corpus(), false).unwrap();
    assert_eq!(report.llm_matrix, ConfusionMatrix::new(15907, 23, 1234, 8572));
    assert_eq!(report.instructor_matrix, ConfusionMatrix::new(17141, 1260, 0, 7335));
    assert_eq!(report.other_mismatches, OTHER);
    assert_eq!(report.quadrants.compiling() + NO_COMPILE, 33749);
}
