use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{fingerprint, Detection, FrameRef, Op};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed fixture entry: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate fixture fingerprint {0}")]
    Duplicate(String),
}

/// Canned reply, in the same shape as the wire reply of the matching role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureResponse {
    Content { content: String },
    Detections { detections: Vec<Detection> },
    Embedding { embedding: Vec<f32> },
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub fingerprint: String,
    pub response: FixtureResponse,
}

/// Ordered fingerprint → response table with per-entry hit counts.
#[derive(Debug, Default)]
pub struct Fixture {
    entries: Vec<FixtureEntry>,
    index: HashMap<String, usize>,
    hits: Vec<AtomicU64>,
}

impl Fixture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: FixtureEntry) -> Result<(), FixtureError> {
        if self.index.contains_key(&entry.fingerprint) {
            return Err(FixtureError::Duplicate(entry.fingerprint));
        }
        self.index.insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
        self.hits.push(AtomicU64::new(0));
        Ok(())
    }

    /// Adds a response for the request described by `op`, `text` and
    /// `frames`, returning its fingerprint. Re-inserting the same request
    /// replaces the earlier response.
    pub fn insert(&mut self, op: Op, text: &str, frames: &[FrameRef], response: FixtureResponse) -> String {
        let fp = fingerprint(op, text, frames);
        match self.index.get(&fp) {
            Some(&i) => self.entries[i].response = response,
            None => self
                .push(FixtureEntry {
                    fingerprint: fp.clone(),
                    response,
                })
                .expect("fingerprint checked above"),
        }
        fp
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let file = fs::File::open(path).map_err(|source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut fixture = Fixture::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| FixtureError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| FixtureError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            fixture.push(entry)?;
        }
        Ok(fixture)
    }

    pub fn save(&self, path: &Path) -> Result<(), FixtureError> {
        let io = |source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("fixture entry serializes");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<&FixtureResponse> {
        let &i = self.index.get(fingerprint)?;
        self.hits[i].fetch_add(1, Ordering::Relaxed);
        Some(&self.entries[i].response)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FixtureEntry] {
        &self.entries
    }

    /// Fingerprints never looked up so far, in file order.
    pub fn unconsumed(&self) -> Vec<&str> {
        self.entries
            .iter()
            .zip(&self.hits)
            .filter(|(_, h)| h.load(Ordering::Relaxed) == 0)
            .map(|(e, _)| e.fingerprint.as_str())
            .collect()
    }
}
