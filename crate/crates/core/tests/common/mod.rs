#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use testforge::config::Config;
use testforge::model::Grade;
use testforge::runner::RunConfig;

pub const FIXTURE_PROBLEMS: [&str; 5] = ["p05", "p07", "p11", "p24", "p25"];

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A scratch copy of the fixture corpus, so runs never touch the checked-in bundles.
pub fn scratch_fixtures() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&fixtures_dir(), dir.path());
    dir
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Run the CLI in-process.
pub fn cli(args: &[&str]) -> Outcome {
    cli_with_input(args, "")
}

pub fn cli_with_input(args: &[&str], input: &str) -> Outcome {
    let mut argv = vec!["testforge"];
    argv.extend_from_slice(args);
    let mut stdin = Cursor::new(input.as_bytes().to_vec());
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = testforge::cli::run(argv, &mut stdin, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// `pipeline --replay` on one problem of a scratch corpus.
pub fn replay_pipeline(root: &Path, problem: &str) -> Outcome {
    let config = root.join("testforge.json");
    let dir = root.join(problem);
    cli(&[
        "--config",
        config.to_str().unwrap(),
        "pipeline",
        "--problem",
        dir.to_str().unwrap(),
        "--replay",
    ])
}

#[derive(Debug, Deserialize)]
pub struct Label {
    pub llm: i8,
    pub instructor: i8,
    pub note: String,
}

pub fn labels(problem_dir: &Path) -> BTreeMap<String, Label> {
    serde_json::from_slice(&fs::read(problem_dir.join("labels.json")).unwrap()).unwrap()
}

pub fn grade_value(g: Grade) -> i8 {
    g.value()
}

pub fn fixture_run_config() -> RunConfig {
    Config::load(&fixtures_dir().join("testforge.json")).unwrap().run_config().unwrap()
}
