//! Frame lookup. The pipeline never decodes video: frames are pre-extracted
//! images addressed by video and timestamp.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::clients::FrameRef;
use crate::sampling::Millis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("frame directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("no frame for video {video_id} at {timestamp}: expected {path}")]
    MissingFrame {
        video_id: String,
        timestamp: Millis,
        path: PathBuf,
    },
}

pub trait FrameProvider: Send + Sync {
    fn frame(&self, video_id: &str, timestamp: Millis) -> Result<FrameRef, FrameError>;

    /// Length of the video if the provider can tell.
    fn duration_hint(&self, _video_id: &str) -> Option<Millis> {
        None
    }
}

/// Resolves frames from `<root>/<video_id>/<timestamp_ms>.jpg`.
#[derive(Debug, Clone)]
pub struct DirFrameProvider {
    root: PathBuf,
    check_exists: bool,
}

impl DirFrameProvider {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, FrameError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(FrameError::MissingDir(root));
        }
        Ok(Self {
            root,
            check_exists: true,
        })
    }

    /// Skips the per-frame existence check; paths are still computed.
    pub fn unchecked(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            check_exists: false,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn frame_path(&self, video_id: &str, timestamp: Millis) -> PathBuf {
        self.root.join(video_id).join(format!("{}.jpg", timestamp.0))
    }

    /// Directory holding a video's frames; errors if it does not exist.
    pub fn video_dir(&self, video_id: &str) -> Result<PathBuf, FrameError> {
        let dir = self.root.join(video_id);
        if dir.is_dir() {
            Ok(dir)
        } else {
            Err(FrameError::MissingDir(dir))
        }
    }

    /// Largest frame timestamp available for a video.
    pub fn last_timestamp(&self, video_id: &str) -> Result<Option<Millis>, FrameError> {
        let dir = self.video_dir(video_id)?;
        let entries = std::fs::read_dir(&dir).map_err(|_| FrameError::MissingDir(dir.clone()))?;
        Ok(entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name();
                let name = name.to_str()?;
                name.strip_suffix(".jpg")?.parse::<u64>().ok()
            })
            .max()
            .map(Millis))
    }
}

impl FrameProvider for DirFrameProvider {
    fn frame(&self, video_id: &str, timestamp: Millis) -> Result<FrameRef, FrameError> {
        let path = self.frame_path(video_id, timestamp);
        if self.check_exists && !path.is_file() {
            return Err(FrameError::MissingFrame {
                video_id: video_id.to_string(),
                timestamp,
                path,
            });
        }
        Ok(FrameRef::video_frame(video_id, timestamp.0, path))
    }

    /// One millisecond past the last extracted frame.
    fn duration_hint(&self, video_id: &str) -> Option<Millis> {
        self.last_timestamp(video_id).ok().flatten().map(|t| Millis(t.0 + 1))
    }
}
