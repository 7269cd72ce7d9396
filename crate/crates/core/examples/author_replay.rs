//! Rebuild the replay fixtures under `fixtures/<pid>/llm/` from the
//! hand-written responses in `fixtures/sources/llm/<pid>/`.
//!
//! Run after `testforge ingest` has produced the bundles:
//!
//!     cargo run --example author_replay -- [FIXTURES_DIR]

use std::fs;
use std::path::PathBuf;

use testforge::ingest::load_bundle;
use testforge::llm::{FixtureStore, Gateway, RecordingProvider, ScriptedProvider};
use testforge::prompt::{HarnessContract, ModelSettings, Pipeline};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    let sources = root.join("sources/llm");
    let mut ids: Vec<String> = fs::read_dir(&sources)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();

    for pid in ids {
        let bundle = load_bundle(&root.join(&pid))?;
        let detailed = fs::read_to_string(sources.join(&pid).join("detailed.json"))?;
        let tests = fs::read_to_string(sources.join(&pid).join("tests.md"))?;

        let llm_dir = root.join(&pid).join("llm");
        if llm_dir.exists() {
            for entry in fs::read_dir(&llm_dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|x| x == "json") {
                    fs::remove_file(path)?;
                }
            }
        }

        let provider = RecordingProvider::new(ScriptedProvider::texts([detailed, tests]), FixtureStore::new(&llm_dir));
        let gateway = Gateway::new(Box::new(provider));
        let pipeline = Pipeline { gateway: &gateway, model: ModelSettings::default(), contract: HarnessContract::default() };
        let artifact = pipeline.generate_suite_source(&bundle.problem)?;
        println!("{pid}: {:?}, {} bytes of source", artifact.kind, artifact.source_text.len());
    }
    Ok(())
}
