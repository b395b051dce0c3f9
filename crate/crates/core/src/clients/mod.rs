//! Interfaces to the four external models: chunk summarizer, object detector,
//! text encoder and answerer.
//!
//! Every role is a small object-safe trait. The pipeline runs against a
//! hosted endpoint ([`HttpClient`]) or a deterministic replay of recorded
//! responses ([`ScriptedClient`]). Requests are identified by a
//! stable [`fingerprint`] computed from their canonicalized fields, which is
//! what fixture files are keyed by.

mod fixture;
mod http;
pub mod net;
mod retry;
mod scripted;

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::visual::BBox;

pub use fixture::{Fixture, FixtureEntry, FixtureError, FixtureResponse};
pub use http::HttpClient;
pub use retry::{NoSleep, RecordingSleep, RetryPolicy, Sleep, ThreadSleep};
pub use scripted::ScriptedClient;

/// Environment variable holding the default API base URL.
pub const ENV_API_BASE: &str = "EVIDENCE_API_BASE";
/// Environment variable holding the default API key.
pub const ENV_API_KEY: &str = "EVIDENCE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("remote model error: {0}")]
    Remote(String),
    #[error("no fixture entry for request fingerprint {fingerprint}")]
    MissingFixture { fingerprint: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("network access is forbidden in this process")]
    NetworkForbidden,
    #[error("{source} (after {attempts} attempts)")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        source: Box<ClientError>,
    },
}

impl ClientError {
    /// Whether a fresh attempt of the same request might succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Timeout | ClientError::Transport(_) | ClientError::Remote(_) => true,
            ClientError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// An image handed to a model: a video frame or a reference image, with an
/// optional normalized region of interest.
///
/// `key` is the stable identity used in fingerprints (`<video_id>@<ms>` for
/// video frames); `path` is where the pixels live and never enters a
/// fingerprint, so fixtures survive a moved frame directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub key: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

impl FrameRef {
    pub fn video_frame(video_id: &str, timestamp_ms: u64, path: impl Into<PathBuf>) -> Self {
        Self {
            key: format!("{video_id}@{timestamp_ms}"),
            path: path.into(),
            bbox: None,
        }
    }

    /// A reference image, keyed by its file name.
    pub fn reference_image(path: &Path, bbox: Option<BBox>) -> Self {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self {
            key: format!("ref:{name}"),
            path: path.to_path_buf(),
            bbox,
        }
    }

    pub fn with_bbox(mut self, bbox: Option<BBox>) -> Self {
        self.bbox = bbox;
        self
    }
}

/// One object proposal returned by a detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f32,
    pub embedding: Vec<f32>,
}

pub trait Summarizer: Send + Sync {
    /// Sends frames plus an instruction and returns the raw model text.
    fn summarize(&self, frames: &[FrameRef], instruction: &str) -> Result<String, ClientError>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, image: &FrameRef) -> Result<Vec<Detection>, ClientError>;
}

pub trait TextEncoder: Send + Sync {
    fn embed_text(&self, term: &str) -> Result<Vec<f32>, ClientError>;
}

pub trait Answerer: Send + Sync {
    fn answer_chat(&self, prompt: &str, frames: &[FrameRef]) -> Result<String, ClientError>;
}

/// The model role a request is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Summarize,
    Detect,
    EmbedText,
    AnswerChat,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Summarize => "summarize",
            Op::Detect => "detect",
            Op::EmbedText => "embed_text",
            Op::AnswerChat => "answer_chat",
        }
    }
}

#[derive(Serialize)]
struct CanonicalFrame<'a> {
    key: &'a str,
    bbox: Option<[u32; 4]>,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    op: &'static str,
    text: &'a str,
    frames: Vec<CanonicalFrame<'a>>,
}

/// Canonical JSON form of a request: role, text and frame identities. Box
/// coordinates enter as raw float bits.
pub fn canonical_request(op: Op, text: &str, frames: &[FrameRef]) -> String {
    let req = CanonicalRequest {
        op: op.as_str(),
        text,
        frames: frames
            .iter()
            .map(|f| CanonicalFrame {
                key: &f.key,
                bbox: f.bbox.map(|b| b.to_array().map(f32::to_bits)),
            })
            .collect(),
    };
    serde_json::to_string(&req).expect("canonical request serializes")
}

/// SHA-256 (hex) of the canonical request.
pub fn fingerprint(op: Op, text: &str, frames: &[FrameRef]) -> String {
    let digest = Sha256::digest(canonical_request(op, text, frames).as_bytes());
    hex::encode(digest)
}

/// Connection settings for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    /// Full URL of the role's endpoint. When absent, the role path is
    /// appended to `$EVIDENCE_API_BASE`.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub mock_fixture: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: String::new(),
            auth_env: ENV_API_KEY.to_string(),
            timeout_s: 120.0,
            max_retries: 2,
            mock_fixture: None,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.endpoint.is_some() && self.mock_fixture.is_some() {
            return Err(ClientError::InvalidArgument(
                "a client cannot have both an endpoint and a mock fixture".into(),
            ));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(ClientError::InvalidArgument(format!(
                "timeout must be positive, got {}",
                self.timeout_s
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.freed.notify_one();
    }
}

/// Remembers the first embedding dimension a client produced and rejects
/// later replies that drift from it.
#[derive(Debug, Default)]
pub struct DimGuard {
    dim: Mutex<Option<usize>>,
}

impl DimGuard {
    pub fn check(&self, what: &str, dim: usize) -> Result<(), ClientError> {
        let mut slot = self.dim.lock().unwrap();
        match *slot {
            None => {
                *slot = Some(dim);
                Ok(())
            }
            Some(d) if d == dim => Ok(()),
            Some(d) => Err(ClientError::Protocol(format!(
                "{what} embedding dimension changed from {d} to {dim}"
            ))),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        *self.dim.lock().unwrap()
    }
}
