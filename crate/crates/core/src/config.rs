//! Application configuration, read from a TOML file. Every field has a
//! default; command-line flags are applied on top by the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ClientConfig, ClientError};
use crate::inference::{AnswerOptions, InferenceError, PipelineSettings, RoutingTable};
use crate::retrieval::{RetrievalConfig, RetrievalError};
use crate::sampling::{SamplingConfig, SamplingError};
use crate::visual::DEFAULT_DETECTOR_THRESHOLD;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
}

impl From<SamplingError> for ConfigError {
    fn from(e: SamplingError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<RetrievalError> for ConfigError {
    fn from(e: RetrievalError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<InferenceError> for ConfigError {
    fn from(e: InferenceError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<ClientError> for ConfigError {
    fn from(e: ClientError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualSettings {
    pub detector_threshold: f32,
    /// Embedding dimension of a new db; inferred from the detector when unset.
    pub embedding_dim: Option<usize>,
    pub workers: usize,
}

impl Default for VisualSettings {
    fn default() -> Self {
        Self {
            detector_threshold: DEFAULT_DETECTOR_THRESHOLD,
            embedding_dim: None,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSettings {
    /// Replaces every routed frame budget when set.
    pub frame_budget: Option<usize>,
    pub narrow_k: usize,
    /// Questions answered concurrently.
    pub workers: usize,
    pub answer: AnswerOptions,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            frame_budget: None,
            narrow_k: PipelineSettings::default().narrow_k,
            workers: 4,
            answer: AnswerOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsConfig {
    pub summarizer: ClientConfig,
    pub detector: ClientConfig,
    pub encoder: ClientConfig,
    pub answerer: ClientConfig,
}

impl ClientsConfig {
    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ClientConfig> {
        [&mut self.summarizer, &mut self.detector, &mut self.encoder, &mut self.answerer].into_iter()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClientConfig> {
        [&self.summarizer, &self.detector, &self.encoder, &self.answerer].into_iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub semdb: Option<PathBuf>,
    pub visdb: Option<PathBuf>,
    pub frames_root: Option<PathBuf>,
    /// Fixture file shared by every client in mock mode.
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub mock: bool,
    pub sampling: SamplingConfig,
    pub retrieval: RetrievalConfig,
    pub visual: VisualSettings,
    pub inference: InferenceSettings,
    /// Replaces the bundled routing table when present.
    pub routing: Option<RoutingTable>,
    pub clients: ClientsConfig,
    pub paths: PathsConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampling.validate()?;
        self.retrieval.validate()?;
        if let Some(r) = &self.routing {
            r.validate()?;
        }
        if !(0.0..=1.0).contains(&self.visual.detector_threshold) {
            return Err(ConfigError::Invalid(format!(
                "detector threshold must lie in [0, 1], got {}",
                self.visual.detector_threshold
            )));
        }
        if self.visual.embedding_dim == Some(0) {
            return Err(ConfigError::Invalid("embedding dimension must be positive".into()));
        }
        if self.inference.frame_budget == Some(0) {
            return Err(ConfigError::Invalid("frame budget must be at least 1".into()));
        }
        for c in self.clients.iter() {
            c.validate()?;
            if self.mock && c.endpoint.is_some() {
                return Err(ConfigError::Invalid("mock mode and a client endpoint are mutually exclusive".into()));
            }
        }
        Ok(())
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        let mut routing = self.routing.clone().unwrap_or_default();
        if let Some(b) = self.inference.frame_budget {
            routing.set_frame_budget(b);
        }
        PipelineSettings {
            routing,
            retrieval: self.retrieval.clone(),
            answer: self.inference.answer,
            narrow_k: self.inference.narrow_k,
            frame_fps: self.sampling.visual_fps,
        }
    }
}

/// Returns the path when it exists.
pub fn require_path<'a>(what: &'static str, path: Option<&'a PathBuf>) -> Result<&'a Path, ConfigError> {
    let path = path.ok_or_else(|| ConfigError::Invalid(format!("no {what} given")))?;
    if path.exists() {
        Ok(path)
    } else {
        Err(ConfigError::MissingPath {
            what,
            path: path.clone(),
        })
    }
}
