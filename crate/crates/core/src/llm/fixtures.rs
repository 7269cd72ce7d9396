//! Content-addressed recordings of chat exchanges.
//!
//! Layout: one `<digest>.json` file per request under the fixture directory,
//! holding `{"request": ..., "response": ...}`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub request: ChatRequest,
    pub response: ChatResponse,
}

#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, request: &ChatRequest) -> Result<Option<Recording>, GatewayError> {
        let path = self.path_for(&request.digest());
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let rec: Recording = serde_json::from_slice(&bytes).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
        })?;
        Ok(Some(rec))
    }

    pub fn record_fixture(&self, request: &ChatRequest, response: &ChatResponse) -> Result<PathBuf, GatewayError> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&request.digest());
        let rec = Recording { request: request.clone(), response: response.clone() };
        let mut bytes = serde_json::to_vec_pretty(&rec).map_err(io::Error::from)?;
        bytes.push(b'\n');
        crate::fsutil::write_atomic(&path, &bytes)?;
        Ok(path)
    }

    /// Every stored recording, sorted by file name.
    pub fn all(&self) -> Result<Vec<Recording>, GatewayError> {
        let mut paths: Vec<PathBuf> = match fs::read_dir(&self.dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let bytes = fs::read(&p)?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())).into())
            })
            .collect()
    }
}

/// Answers only from recordings; never touches the network.
pub struct ReplayProvider {
    store: FixtureStore,
}

impl ReplayProvider {
    pub fn new(store: FixtureStore) -> Self {
        ReplayProvider { store }
    }
}

impl ChatProvider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        match self.store.get(request)? {
            Some(rec) if rec.request == *request => Ok(rec.response),
            _ => Err(GatewayError::FixtureMiss { digest: request.digest() }),
        }
    }
}

/// Forwards to another provider and stores every successful exchange.
pub struct RecordingProvider<P> {
    inner: P,
    store: FixtureStore,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P, store: FixtureStore) -> Self {
        RecordingProvider { inner, store }
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn name(&self) -> &str {
        "recording"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.inner.send(request)?;
        self.store.record_fixture(request, &response)?;
        Ok(response)
    }
}
