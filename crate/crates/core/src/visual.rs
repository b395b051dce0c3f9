//! Object-centric visual evidence: bounding-box proposals with embeddings,
//! grouped per video and timestamp, plus the `VEVD` binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! header   "VEVD"            4 bytes magic
//!          version: u32      currently 1
//!          dim: u32          embedding dimension D (> 0)
//!          threshold: f32    detector threshold the db was built with
//!          names: u32        number of video names, then per name
//!                            len: u32 + len bytes of UTF-8
//! records  video_index: u32
//!          timestamp_ms: u64
//!          bbox: 4 x f32     x0, y0, x1, y1
//!          score: f32
//!          embedding: D x f32
//! ```
//!
//! Records follow the header until end of file; every record has the same
//! size, `32 + 4 * D` bytes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::clients::{ClientError, Detection, Detector};
use crate::frames::{FrameError, FrameProvider};
use crate::sampling::{plan_frames, ChunkSpan, Millis, SamplingError};

pub const MAGIC: [u8; 4] = *b"VEVD";
pub const FORMAT_VERSION: u32 = 1;
/// Minimum detector confidence for a proposal to be stored.
pub const DEFAULT_DETECTOR_THRESHOLD: f32 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisualError {
    #[error("embedding has {got} components, db expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid detection: {0}")]
    Validation(String),
    #[error("timestamp {got} for video {video_id} precedes already ingested {last}")]
    OutOfOrder { video_id: String, last: Millis, got: Millis },
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid header")]
    InvalidHeader,
    #[error("truncated data")]
    Truncated,
    #[error("video name is not UTF-8")]
    InvalidName,
    #[error("video index {0} is not in the name table")]
    BadVideoIndex(u32),
    #[error("invalid record")]
    InvalidRecord,
}

#[derive(Debug, Error)]
pub enum VisualFormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{kind} at byte offset {offset}{}", detail.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    Format {
        kind: FormatErrorKind,
        offset: u64,
        detail: Option<String>,
    },
}

impl VisualFormatError {
    pub fn kind(&self) -> Option<FormatErrorKind> {
        match self {
            VisualFormatError::Format { kind, .. } => Some(*kind),
            VisualFormatError::Io { .. } => None,
        }
    }

    pub fn offset(&self) -> Option<u64> {
        match self {
            VisualFormatError::Format { offset, .. } => Some(*offset),
            VisualFormatError::Io { .. } => None,
        }
    }
}

/// Normalized box `(x0, y0, x1, y1)` with `0 <= x0 < x1 <= 1` and likewise
/// for y. Serialized as a four-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f32; 4]", into = "[f32; 4]")]
pub struct BBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BBox {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self, VisualError> {
        let in_unit = |v: f32| (0.0..=1.0).contains(&v);
        if !(in_unit(x0) && in_unit(y0) && in_unit(x1) && in_unit(y1)) {
            return Err(VisualError::Validation(format!(
                "box ({x0}, {y0}, {x1}, {y1}) is not normalized to [0, 1]"
            )));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(VisualError::Validation(format!(
                "box ({x0}, {y0}, {x1}, {y1}) has non-positive extent"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl TryFrom<[f32; 4]> for BBox {
    type Error = VisualError;

    fn try_from(v: [f32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f32; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// One stored detection. Its video and timestamp are carried by the
/// enclosing [`ProposalGroup`].
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub score: f32,
    pub embedding: Vec<f32>,
}

/// All proposals detected in one frame: the set B_t.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGroup {
    pub timestamp: Millis,
    pub proposals: Vec<Proposal>,
}

/// Flattened view of a stored proposal with its video and timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualProposal<'a> {
    pub video_id: &'a str,
    pub timestamp: Millis,
    pub proposal: &'a Proposal,
}

#[derive(Debug, Clone)]
pub struct VisualDb {
    dim: usize,
    detector_threshold: f32,
    videos: Vec<String>,
    index: HashMap<String, usize>,
    groups: Vec<Vec<ProposalGroup>>,
}

impl PartialEq for VisualDb {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.detector_threshold == other.detector_threshold
            && self.videos == other.videos
            && self.groups == other.groups
    }
}

impl VisualDb {
    pub fn new(dim: usize) -> Result<Self, VisualError> {
        Self::with_threshold(dim, DEFAULT_DETECTOR_THRESHOLD)
    }

    pub fn with_threshold(dim: usize, detector_threshold: f32) -> Result<Self, VisualError> {
        if dim == 0 {
            return Err(VisualError::Validation("embedding dimension must be positive".into()));
        }
        if !detector_threshold.is_finite() {
            return Err(VisualError::Validation("detector threshold must be finite".into()));
        }
        Ok(Self {
            dim,
            detector_threshold,
            videos: Vec::new(),
            index: HashMap::new(),
            groups: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn detector_threshold(&self) -> f32 {
        self.detector_threshold
    }

    /// Video names in registration order.
    pub fn videos(&self) -> &[String] {
        &self.videos
    }

    fn video_slot(&mut self, video_id: &str) -> usize {
        if let Some(&i) = self.index.get(video_id) {
            return i;
        }
        let i = self.videos.len();
        self.videos.push(video_id.to_string());
        self.index.insert(video_id.to_string(), i);
        self.groups.push(Vec::new());
        i
    }

    /// Registers a video without adding proposals.
    pub fn register_video(&mut self, video_id: &str) {
        self.video_slot(video_id);
    }

    /// Appends the detections at or above the detector threshold and returns
    /// how many were kept. Validation happens before any mutation.
    pub fn ingest_detections(
        &mut self,
        video_id: &str,
        timestamp: Millis,
        detections: Vec<Detection>,
    ) -> Result<usize, VisualError> {
        for d in &detections {
            if d.embedding.len() != self.dim {
                return Err(VisualError::Dimension {
                    expected: self.dim,
                    got: d.embedding.len(),
                });
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(VisualError::Validation(format!(
                    "score {} outside [0, 1]",
                    d.score
                )));
            }
            BBox::new(d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1)?;
        }
        if let Some(last) = self
            .index
            .get(video_id)
            .and_then(|&i| self.groups[i].last())
            .map(|g| g.timestamp)
        {
            if timestamp < last {
                return Err(VisualError::OutOfOrder {
                    video_id: video_id.to_string(),
                    last,
                    got: timestamp,
                });
            }
        }
        let slot = self.video_slot(video_id);
        let kept: Vec<Proposal> = detections
            .into_iter()
            .filter(|d| d.score >= self.detector_threshold)
            .map(|d| Proposal {
                bbox: d.bbox,
                score: d.score,
                embedding: d.embedding,
            })
            .collect();
        let n = kept.len();
        if n > 0 {
            self.push_group_items(slot, timestamp, kept);
        }
        Ok(n)
    }

    fn push_group_items(&mut self, slot: usize, timestamp: Millis, items: Vec<Proposal>) {
        let groups = &mut self.groups[slot];
        match groups.last_mut() {
            Some(g) if g.timestamp == timestamp => g.proposals.extend(items),
            _ => groups.push(ProposalGroup {
                timestamp,
                proposals: items,
            }),
        }
    }

    /// Frame groups of a video in timestamp order; empty for unknown videos.
    pub fn groups(&self, video_id: &str) -> &[ProposalGroup] {
        self.index
            .get(video_id)
            .map(|&i| self.groups[i].as_slice())
            .unwrap_or(&[])
    }

    /// The proposals detected at exactly `timestamp`.
    pub fn proposals_at(&self, video_id: &str, timestamp: Millis) -> &[Proposal] {
        let groups = self.groups(video_id);
        match groups.binary_search_by_key(&timestamp, |g| g.timestamp) {
            Ok(i) => &groups[i].proposals,
            Err(_) => &[],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = VisualProposal<'_>> {
        self.videos.iter().zip(&self.groups).flat_map(|(v, groups)| {
            groups.iter().flat_map(move |g| {
                g.proposals.iter().map(move |p| VisualProposal {
                    video_id: v,
                    timestamp: g.timestamp,
                    proposal: p,
                })
            })
        })
    }

    pub fn proposal_count(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|gs| gs.iter())
            .map(|g| g.proposals.len())
            .sum()
    }

    /// Last detection timestamp of a video, if any.
    pub fn last_timestamp(&self, video_id: &str) -> Option<Millis> {
        self.groups(video_id).last().map(|g| g.timestamp)
    }

    /// Equality that compares every float by its bit pattern.
    pub fn bit_eq(&self, other: &Self) -> bool {
        fn bits(v: &[f32]) -> impl Iterator<Item = u32> + '_ {
            v.iter().map(|f| f.to_bits())
        }
        self.dim == other.dim
            && self.detector_threshold.to_bits() == other.detector_threshold.to_bits()
            && self.videos == other.videos
            && self.groups.len() == other.groups.len()
            && self.groups.iter().zip(&other.groups).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(ga, gb)| {
                        ga.timestamp == gb.timestamp
                            && ga.proposals.len() == gb.proposals.len()
                            && ga.proposals.iter().zip(&gb.proposals).all(|(pa, pb)| {
                                bits(&pa.bbox.to_array()).eq(bits(&pb.bbox.to_array()))
                                    && pa.score.to_bits() == pb.score.to_bits()
                                    && bits(&pa.embedding).eq(bits(&pb.embedding))
                            })
                    })
            })
    }

    /// Size in bytes of one record for this db's dimension.
    pub fn record_size(&self) -> usize {
        32 + 4 * self.dim
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.detector_threshold.to_le_bytes())?;
        w.write_all(&(self.videos.len() as u32).to_le_bytes())?;
        for name in &self.videos {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for (vi, groups) in self.groups.iter().enumerate() {
            for g in groups {
                for p in &g.proposals {
                    w.write_all(&(vi as u32).to_le_bytes())?;
                    w.write_all(&g.timestamp.0.to_le_bytes())?;
                    for c in p.bbox.to_array() {
                        w.write_all(&c.to_le_bytes())?;
                    }
                    w.write_all(&p.score.to_le_bytes())?;
                    for c in &p.embedding {
                        w.write_all(&c.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, VisualFormatError> {
        let mut r = OffsetReader { inner: r, offset: 0 };
        let mut magic = [0u8; 4];
        r.fill(&mut magic)?;
        if magic != MAGIC {
            return Err(format_err(FormatErrorKind::BadMagic, 0, None));
        }
        let at = r.offset;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format_err(FormatErrorKind::UnsupportedVersion(version), at, None));
        }
        let at = r.offset;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(format_err(
                FormatErrorKind::InvalidHeader,
                at,
                Some("embedding dimension is zero".into()),
            ));
        }
        let at = r.offset;
        let threshold = r.f32()?;
        let mut db = VisualDb::with_threshold(dim, threshold)
            .map_err(|e| format_err(FormatErrorKind::InvalidHeader, at, Some(e.to_string())))?;
        let count = r.u32()?;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.offset;
            let mut buf = vec![0u8; len];
            r.fill(&mut buf)?;
            let name = String::from_utf8(buf)
                .map_err(|_| format_err(FormatErrorKind::InvalidName, at, None))?;
            if db.index.contains_key(&name) {
                return Err(format_err(
                    FormatErrorKind::InvalidHeader,
                    at,
                    Some(format!("duplicate video name {name:?}")),
                ));
            }
            db.register_video(&name);
        }

        let record_size = db.record_size();
        let mut rec = vec![0u8; record_size];
        loop {
            let start = r.offset;
            let n = r.fill_or_eof(&mut rec)?;
            if n == 0 {
                break;
            }
            if n < record_size {
                return Err(format_err(
                    FormatErrorKind::Truncated,
                    start,
                    Some(format!("record has {n} of {record_size} bytes")),
                ));
            }
            let u32_at = |o: usize| u32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
            let f32_at = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
            let vi = u32_at(0);
            if vi as usize >= db.videos.len() {
                return Err(format_err(FormatErrorKind::BadVideoIndex(vi), start, None));
            }
            let ts = Millis(u64::from_le_bytes(rec[4..12].try_into().unwrap()));
            let bbox = BBox::new(f32_at(12), f32_at(16), f32_at(20), f32_at(24)).map_err(|e| {
                format_err(FormatErrorKind::InvalidRecord, start, Some(e.to_string()))
            })?;
            let score = f32_at(28);
            if !(score >= db.detector_threshold && score <= 1.0) {
                return Err(format_err(
                    FormatErrorKind::InvalidRecord,
                    start,
                    Some(format!("score {score} below threshold or out of range")),
                ));
            }
            let embedding = (0..dim).map(|k| f32_at(32 + 4 * k)).collect();
            let slot = vi as usize;
            if let Some(last) = db.groups[slot].last() {
                if ts < last.timestamp {
                    return Err(format_err(
                        FormatErrorKind::InvalidRecord,
                        start,
                        Some(format!("timestamp {ts} precedes {}", last.timestamp)),
                    ));
                }
            }
            db.push_group_items(slot, ts, vec![Proposal { bbox, score, embedding }]);
        }
        Ok(db)
    }
}

fn format_err(kind: FormatErrorKind, offset: u64, detail: Option<String>) -> VisualFormatError {
    VisualFormatError::Format { kind, offset, detail }
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    /// Reads as many bytes as available up to `buf.len()`.
    fn fill_or_eof(&mut self, buf: &mut [u8]) -> Result<usize, VisualFormatError> {
        let mut n = 0;
        while n < buf.len() {
            match self.inner.read(&mut buf[n..]) {
                Ok(0) => break,
                Ok(k) => n += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(format_err(
                        FormatErrorKind::Truncated,
                        self.offset + n as u64,
                        Some(e.to_string()),
                    ))
                }
            }
        }
        self.offset += n as u64;
        Ok(n)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<(), VisualFormatError> {
        let start = self.offset;
        let n = self.fill_or_eof(buf)?;
        if n < buf.len() {
            return Err(format_err(FormatErrorKind::Truncated, start, None));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, VisualFormatError> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32, VisualFormatError> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisualBuildError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("frame for {video_id} at {timestamp}: {source}")]
    Frame {
        video_id: String,
        timestamp: Millis,
        source: FrameError,
    },
    #[error("detector failed on {video_id} at {timestamp}: {source}")]
    Client {
        video_id: String,
        timestamp: Millis,
        source: ClientError,
    },
    #[error("ingesting {video_id} at {timestamp}: {source}")]
    Ingest {
        video_id: String,
        timestamp: Millis,
        source: VisualError,
    },
    #[error("embedding dimension unknown: no detections were returned and none was configured")]
    UnknownDimension,
}

/// Detector output for every sampled frame of one video, in time order.
pub type FrameDetections = Vec<(Millis, Vec<Detection>)>;

/// Runs the detector over a video's frames on the `fps` grid of
/// `[0, duration_s)`, with up to `workers` requests in flight.
pub fn detect_video(
    frames: &dyn FrameProvider,
    detector: &dyn Detector,
    video_id: &str,
    duration_s: f64,
    fps: f64,
    workers: usize,
) -> Result<FrameDetections, VisualBuildError> {
    let whole = ChunkSpan::from_secs(0.0, duration_s, 0)?;
    let stamps = plan_frames(&whole, fps)?;
    let slots: Vec<Mutex<Option<Result<Vec<Detection>, VisualBuildError>>>> =
        stamps.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, stamps.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&timestamp) = stamps.get(i) else { break };
                let result = frames
                    .frame(video_id, timestamp)
                    .map_err(|source| VisualBuildError::Frame {
                        video_id: video_id.to_string(),
                        timestamp,
                        source,
                    })
                    .and_then(|f| {
                        detector.detect(&f).map_err(|source| VisualBuildError::Client {
                            video_id: video_id.to_string(),
                            timestamp,
                            source,
                        })
                    });
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    stamps
        .into_iter()
        .zip(slots)
        .map(|(t, slot)| Ok((t, slot.into_inner().unwrap().expect("every frame was visited")?)))
        .collect()
}

/// Ingests detections of several videos into a new db. The embedding
/// dimension is `dim` when given, else that of the first detection.
pub fn assemble_visual(
    videos: Vec<(String, FrameDetections)>,
    dim: Option<usize>,
    detector_threshold: f32,
) -> Result<VisualDb, VisualBuildError> {
    let dim = dim
        .or_else(|| {
            videos
                .iter()
                .flat_map(|(_, d)| d.iter())
                .flat_map(|(_, d)| d.first())
                .map(|d| d.embedding.len())
                .next()
        })
        .ok_or(VisualBuildError::UnknownDimension)?;
    let mut db = VisualDb::with_threshold(dim, detector_threshold).map_err(|source| VisualBuildError::Ingest {
        video_id: String::new(),
        timestamp: Millis(0),
        source,
    })?;
    for (video_id, per_frame) in videos {
        db.register_video(&video_id);
        for (timestamp, detections) in per_frame {
            db.ingest_detections(&video_id, timestamp, detections)
                .map_err(|source| VisualBuildError::Ingest {
                    video_id: video_id.clone(),
                    timestamp,
                    source,
                })?;
        }
    }
    Ok(db)
}

pub fn persist_visual(path: &Path, db: &VisualDb) -> Result<(), VisualFormatError> {
    let io_err = |source| VisualFormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    db.write_to(BufWriter::new(file)).map_err(io_err)
}

pub fn load_visual(path: &Path) -> Result<VisualDb, VisualFormatError> {
    let file = File::open(path).map_err(|source| VisualFormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    VisualDb::read_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(score: f32, emb: Vec<f32>) -> Detection {
        Detection {
            bbox: BBox::new(0.1, 0.1, 0.4, 0.5).unwrap(),
            score,
            embedding: emb,
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut db = VisualDb::new(2).unwrap();
        let kept = db
            .ingest_detections(
                "v",
                Millis(0),
                vec![det(0.29, vec![1.0, 0.0]), det(0.30, vec![0.0, 1.0]), det(0.9, vec![1.0, 1.0])],
            )
            .unwrap();
        assert_eq!(kept, 2);
        assert!(db.iter().all(|p| p.proposal.score >= db.detector_threshold()));
    }

    #[test]
    fn empty_detections_create_no_group() {
        let mut db = VisualDb::new(2).unwrap();
        assert_eq!(db.ingest_detections("v", Millis(1000), vec![]).unwrap(), 0);
        assert!(db.groups("v").is_empty());
        assert_eq!(db.videos(), ["v"]);
    }

    #[test]
    fn wrong_dimension_leaves_db_unchanged() {
        let mut db = VisualDb::new(2).unwrap();
        db.ingest_detections("v", Millis(0), vec![det(0.5, vec![1.0, 0.0])]).unwrap();
        let before = db.clone();
        let err = db
            .ingest_detections("v", Millis(1000), vec![det(0.5, vec![1.0, 0.0]), det(0.5, vec![1.0])])
            .unwrap_err();
        assert_eq!(err, VisualError::Dimension { expected: 2, got: 1 });
        assert!(db.bit_eq(&before));
    }

    #[test]
    fn out_of_range_box_and_order() {
        assert!(BBox::new(0.5, 0.1, 0.4, 0.2).is_err());
        assert!(BBox::new(0.0, 0.0, 1.2, 0.5).is_err());
        assert!(serde_json::from_str::<BBox>("[0.0,0.0,1.5,0.5]").is_err());

        let mut db = VisualDb::new(1).unwrap();
        db.ingest_detections("v", Millis(5000), vec![det(0.5, vec![1.0])]).unwrap();
        assert!(matches!(
            db.ingest_detections("v", Millis(4000), vec![det(0.5, vec![1.0])]),
            Err(VisualError::OutOfOrder { .. })
        ));
        // Same timestamp extends the existing group.
        db.ingest_detections("v", Millis(5000), vec![det(0.6, vec![2.0])]).unwrap();
        assert_eq!(db.groups("v").len(), 1);
        assert_eq!(db.proposals_at("v", Millis(5000)).len(), 2);
    }

    #[test]
    fn proposals_at_lookup() {
        let mut db = VisualDb::new(2).unwrap();
        db.ingest_detections("v", Millis(3000), vec![det(0.5, vec![1.0, 0.0]), det(0.7, vec![0.6, 0.8])])
            .unwrap();
        assert_eq!(db.proposals_at("v", Millis(3000)).len(), 2);
        assert!(db.proposals_at("v", Millis(4000)).is_empty());
        assert!(db.proposals_at("nope", Millis(3000)).is_empty());
    }

    fn sample_db() -> VisualDb {
        let mut db = VisualDb::new(16).unwrap();
        let emb = |s: f32| (0..16).map(|k| s * k as f32 - 3.5).collect::<Vec<_>>();
        db.ingest_detections("kitchen-1", Millis(0), vec![det(0.5, emb(0.1)), det(0.9, emb(-0.7))])
            .unwrap();
        db.ingest_detections("kitchen-2", Millis(2000), vec![det(0.31, emb(1e-7))]).unwrap();
        db
    }

    #[test]
    fn round_trip_is_bitwise() {
        let db = sample_db();
        assert_eq!(db.proposal_count(), 3);
        let bytes = db.to_bytes();
        let header = 4 + 4 + 4 + 4 + 4 + (4 + 9) * 2;
        assert_eq!(bytes.len(), header + 3 * db.record_size());
        let back = VisualDb::read_from(bytes.as_slice()).unwrap();
        assert!(back.bit_eq(&db));
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_bad_magic_version_and_dim() {
        let mut bytes = sample_db().to_bytes();
        bytes[0] = b'X';
        let err = VisualDb::read_from(bytes.as_slice()).unwrap_err();
        assert_eq!((err.kind(), err.offset()), (Some(FormatErrorKind::BadMagic), Some(0)));

        let mut bytes = sample_db().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = VisualDb::read_from(bytes.as_slice()).unwrap_err();
        assert_eq!(err.kind(), Some(FormatErrorKind::UnsupportedVersion(2)));
        assert_eq!(err.offset(), Some(4));

        let mut bytes = sample_db().to_bytes();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        let err = VisualDb::read_from(bytes.as_slice()).unwrap_err();
        assert_eq!((err.kind(), err.offset()), (Some(FormatErrorKind::InvalidHeader), Some(8)));
    }

    #[test]
    fn rejects_truncated_record_at_its_offset() {
        let db = sample_db();
        let bytes = db.to_bytes();
        let cut = &bytes[..bytes.len() - 5];
        let err = VisualDb::read_from(cut).unwrap_err();
        assert_eq!(err.kind(), Some(FormatErrorKind::Truncated));
        assert_eq!(err.offset(), Some((bytes.len() - db.record_size()) as u64));

        let err = VisualDb::read_from(&bytes[..10]).unwrap_err();
        assert_eq!((err.kind(), err.offset()), (Some(FormatErrorKind::Truncated), Some(8)));
    }

    #[test]
    fn empty_db_round_trip() {
        let db = VisualDb::new(4).unwrap();
        let bytes = db.to_bytes();
        assert_eq!(bytes.len(), 20);
        assert!(VisualDb::read_from(bytes.as_slice()).unwrap().bit_eq(&db));
    }
}
