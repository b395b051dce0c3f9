//! Chunk and frame-sample planning for the evidence builders.
//!
//! All planning happens on an integer millisecond grid. Second-valued inputs
//! are converted once, at the API boundary.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Coarse summarization chunk length in seconds.
pub const DEFAULT_COARSE_CHUNK_S: f64 = 600.0;
/// Coarse summarization sampling rate.
pub const DEFAULT_COARSE_FPS: f64 = 0.1;
/// Fine extraction chunk length in seconds.
pub const DEFAULT_FINE_CHUNK_S: f64 = 60.0;
/// Fine extraction sampling rate.
pub const DEFAULT_FINE_FPS: f64 = 1.0;
/// Object detection sampling rate.
pub const DEFAULT_VISUAL_FPS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A point on the video timeline, in whole milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Millis(pub u64);

impl Millis {
    /// Converts seconds to the nearest millisecond. Negative and non-finite
    /// values are rejected.
    pub fn from_secs_f64(secs: f64) -> Result<Self, SamplingError> {
        if !secs.is_finite() || secs < 0.0 {
            return Err(SamplingError::InvalidArgument(format!(
                "timestamp must be a finite non-negative number of seconds, got {secs}"
            )));
        }
        Ok(Millis((secs * 1000.0).round() as u64))
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn as_u64(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

/// Serde adapter writing a [`Millis`] as a floating-point number of seconds.
pub mod secs {
    use super::*;

    pub fn serialize<S: Serializer>(value: &Millis, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(value.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Millis, D::Error> {
        let raw = f64::deserialize(d)?;
        Millis::from_secs_f64(raw).map_err(serde::de::Error::custom)
    }

    /// Same as the parent module, for `Vec<Millis>`.
    pub mod vec {
        use super::super::*;

        pub fn serialize<S: Serializer>(values: &[Millis], s: S) -> Result<S::Ok, S::Error> {
            use serde::ser::SerializeSeq;
            let mut seq = s.serialize_seq(Some(values.len()))?;
            for v in values {
                seq.serialize_element(&v.as_secs_f64())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Millis>, D::Error> {
            let raw = Vec::<f64>::deserialize(d)?;
            raw.into_iter()
                .map(|s| Millis::from_secs_f64(s).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

/// Half-open interval `[start, end)` of the timeline with its ordinal in a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkSpan {
    #[serde(rename = "start_s", with = "secs")]
    pub start: Millis,
    #[serde(rename = "end_s", with = "secs")]
    pub end: Millis,
    pub index: usize,
}

impl ChunkSpan {
    pub fn new(start: Millis, end: Millis, index: usize) -> Result<Self, SamplingError> {
        if start >= end {
            return Err(SamplingError::InvalidArgument(format!(
                "span start {start} must precede end {end}"
            )));
        }
        Ok(Self { start, end, index })
    }

    pub fn from_secs(start_s: f64, end_s: f64, index: usize) -> Result<Self, SamplingError> {
        Self::new(Millis::from_secs_f64(start_s)?, Millis::from_secs_f64(end_s)?, index)
    }

    pub fn start_s(&self) -> f64 {
        self.start.as_secs_f64()
    }

    pub fn end_s(&self) -> f64 {
        self.end.as_secs_f64()
    }

    pub fn len_ms(&self) -> u64 {
        self.end.0 - self.start.0
    }

    pub fn contains(&self, t: Millis) -> bool {
        self.start <= t && t < self.end
    }

    /// True when the two half-open spans share at least one instant.
    pub fn intersects(&self, other: &ChunkSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for ChunkSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} [{}, {})", self.index, self.start, self.end)
    }
}

/// Chunk lengths and sampling rates for the coarse, fine and visual passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub coarse_chunk_s: f64,
    pub coarse_fps: f64,
    pub fine_chunk_s: f64,
    pub fine_fps: f64,
    pub visual_fps: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            coarse_chunk_s: DEFAULT_COARSE_CHUNK_S,
            coarse_fps: DEFAULT_COARSE_FPS,
            fine_chunk_s: DEFAULT_FINE_CHUNK_S,
            fine_fps: DEFAULT_FINE_FPS,
            visual_fps: DEFAULT_VISUAL_FPS,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let fields = [
            ("coarse_chunk_s", self.coarse_chunk_s),
            ("coarse_fps", self.coarse_fps),
            ("fine_chunk_s", self.fine_chunk_s),
            ("fine_fps", self.fine_fps),
            ("visual_fps", self.visual_fps),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(SamplingError::InvalidArgument(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        for (phase, chunk, fps) in [
            ("coarse", self.coarse_chunk_s, self.coarse_fps),
            ("fine", self.fine_chunk_s, self.fine_fps),
        ] {
            if chunk * fps < 1.0 {
                return Err(SamplingError::InvalidArgument(format!(
                    "{phase} phase samples less than one frame per chunk ({chunk} s at {fps} fps)"
                )));
            }
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<(), SamplingError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SamplingError::InvalidArgument(format!(
            "{name} must be strictly positive, got {v}"
        )))
    }
}

/// Splits `[0, duration_s)` into consecutive spans of `chunk_len_s`; the last
/// span is shorter when the duration is not a multiple of the chunk length.
pub fn plan_chunks(duration_s: f64, chunk_len_s: f64) -> Result<Vec<ChunkSpan>, SamplingError> {
    positive("duration_s", duration_s)?;
    positive("chunk_len_s", chunk_len_s)?;
    let duration = Millis::from_secs_f64(duration_s)?;
    let chunk = Millis::from_secs_f64(chunk_len_s)?;
    plan_chunks_ms(duration, chunk)
}

/// Millisecond variant of [`plan_chunks`].
pub fn plan_chunks_ms(duration: Millis, chunk: Millis) -> Result<Vec<ChunkSpan>, SamplingError> {
    if duration.0 == 0 || chunk.0 == 0 {
        return Err(SamplingError::InvalidArgument(format!(
            "duration ({duration}) and chunk length ({chunk}) must be at least 1 ms"
        )));
    }
    let count = duration.0.div_ceil(chunk.0);
    Ok((0..count)
        .map(|i| {
            let start = i * chunk.0;
            let end = (start + chunk.0).min(duration.0);
            ChunkSpan {
                start: Millis(start),
                end: Millis(end),
                index: i as usize,
            }
        })
        .collect())
}

/// Sample timestamps `start + k / fps` for `k = 0, 1, ...` strictly before the
/// span end. The grid is anchored at the span start.
pub fn plan_frames(span: &ChunkSpan, fps: f64) -> Result<Vec<Millis>, SamplingError> {
    positive("fps", fps)?;
    let step_ms = 1000.0 / fps;
    let len = span.len_ms();
    let mut out = Vec::new();
    let mut last: Option<u64> = None;
    for k in 0u64.. {
        let offset = (k as f64 * step_ms).round() as u64;
        if offset >= len {
            break;
        }
        // Rates above 1000 fps collapse onto the same millisecond.
        if last == Some(offset) {
            continue;
        }
        last = Some(offset);
        out.push(Millis(span.start.0 + offset));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(v: &[Millis]) -> Vec<f64> {
        v.iter().map(|m| m.as_secs_f64()).collect()
    }

    #[test]
    fn exact_division() {
        let spans = plan_chunks(1800.0, 600.0).unwrap();
        let bounds: Vec<_> = spans.iter().map(|s| (s.start_s(), s.end_s())).collect();
        assert_eq!(bounds, vec![(0.0, 600.0), (600.0, 1200.0), (1200.0, 1800.0)]);
        assert_eq!(spans.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn partial_last_chunk() {
        let spans = plan_chunks(3723.0, 60.0).unwrap();
        assert_eq!(spans.len(), 63);
        let last = spans.last().unwrap();
        assert_eq!((last.start_s(), last.end_s()), (3720.0, 3723.0));
    }

    #[test]
    fn single_partial_chunk() {
        let spans = plan_chunks(50.0, 600.0).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start_s(), spans[0].end_s()), (0.0, 50.0));
    }

    #[test]
    fn rejects_non_positive_inputs() {
        assert!(plan_chunks(0.0, 60.0).is_err());
        assert!(plan_chunks(10.0, 0.0).is_err());
        assert!(plan_chunks(-1.0, 60.0).is_err());
        assert!(plan_chunks(f64::NAN, 60.0).is_err());
        let span = ChunkSpan::from_secs(0.0, 10.0, 0).unwrap();
        assert!(plan_frames(&span, 0.0).is_err());
        assert!(plan_frames(&span, -2.0).is_err());
    }

    #[test]
    fn coarse_frames() {
        let span = ChunkSpan::from_secs(0.0, 600.0, 0).unwrap();
        let frames = plan_frames(&span, 0.1).unwrap();
        assert_eq!(frames.len(), 60);
        let expected: Vec<f64> = (0..60).map(|k| k as f64 * 10.0).collect();
        assert_eq!(secs(&frames), expected);
    }

    #[test]
    fn frames_in_short_tail() {
        let span = ChunkSpan::from_secs(3720.0, 3723.0, 62).unwrap();
        assert_eq!(secs(&plan_frames(&span, 1.0).unwrap()), vec![3720.0, 3721.0, 3722.0]);
    }

    #[test]
    fn fine_frames() {
        let span = ChunkSpan::from_secs(0.0, 60.0, 0).unwrap();
        let frames = plan_frames(&span, 1.0).unwrap();
        assert_eq!(secs(&frames), (0..60).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn coarse_frames_for_short_video() {
        let span = plan_chunks(50.0, 600.0).unwrap()[0];
        assert_eq!(secs(&plan_frames(&span, 0.1).unwrap()), vec![0.0, 10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = SamplingConfig::default();
        assert_eq!(cfg.coarse_chunk_s, 600.0);
        assert_eq!(cfg.coarse_fps, 0.1);
        assert_eq!(cfg.fine_chunk_s, 60.0);
        assert_eq!(cfg.fine_fps, 1.0);
        assert_eq!(cfg.visual_fps, 1.0);
        cfg.validate().unwrap();

        let bad = SamplingConfig { coarse_chunk_s: 5.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SamplingConfig { visual_fps: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn span_serializes_as_seconds() {
        let span = ChunkSpan::from_secs(60.0, 120.5, 1).unwrap();
        let json = serde_json::to_string(&span).unwrap();
        assert_eq!(json, r#"{"start_s":60.0,"end_s":120.5,"index":1}"#);
        let back: ChunkSpan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, span);
    }

    #[test]
    fn intersection() {
        let a = ChunkSpan::from_secs(60.0, 120.0, 1).unwrap();
        let b = ChunkSpan::from_secs(100.0, 130.0, 0).unwrap();
        let c = ChunkSpan::from_secs(120.0, 180.0, 2).unwrap();
        assert!(a.intersects(&b));
        assert!(b.intersects(&c));
        assert!(!a.intersects(&c));
    }
}
