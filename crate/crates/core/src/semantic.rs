//! Semantic evidence: a coarse whole-video summary followed by dense
//! per-chunk structured records conditioned on that summary.
//!
//! The builders ask the summarizer for a JSON object with a fixed field set
//! and reject anything else, including surrounding prose. The resulting
//! [`SemanticDb`] is keyed by video id and persisted as line-delimited JSON:
//!
//! ```text
//! {"format":"semdb","version":1}
//! {"kind":"summary","video_id":"P01-01",...}
//! {"kind":"fine","video_id":"P01-01","span":{"start_s":0.0,"end_s":60.0,"index":0},...}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ClientError, FrameRef, Summarizer};
use crate::frames::{FrameError, FrameProvider};
use crate::sampling::{
    plan_chunks, plan_chunks_ms, plan_frames, secs, ChunkSpan, Millis, SamplingConfig, SamplingError,
};

pub const SEMDB_FORMAT: &str = "semdb";
pub const SEMDB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Coarse,
    Fine,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Coarse => "coarse",
            Phase::Fine => "fine",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("{phase} chunk {chunk_index}: {source}")]
    Frame {
        phase: Phase,
        chunk_index: usize,
        #[source]
        source: FrameError,
    },
    #[error("{phase} chunk {chunk_index}: summarizer failed: {source}")]
    Client {
        phase: Phase,
        chunk_index: usize,
        #[source]
        source: ClientError,
    },
    #[error("{phase} chunk {chunk_index}: reply does not match the schema: {message}; raw reply: {raw}")]
    Schema {
        phase: Phase,
        chunk_index: usize,
        message: String,
        raw: String,
    },
    #[error("{} fine chunk(s) failed: {}", failures.len(), failures.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    FineChunks { failures: Vec<SemanticError> },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("unknown video {0}")]
    NotFound(String),
}

impl SemanticError {
    /// Chunk the error is attributed to, when there is one.
    pub fn chunk_index(&self) -> Option<usize> {
        match self {
            SemanticError::Frame { chunk_index, .. }
            | SemanticError::Client { chunk_index, .. }
            | SemanticError::Schema { chunk_index, .. } => Some(*chunk_index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityStage {
    pub label: String,
    pub span: ChunkSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalSummary {
    pub video_id: String,
    pub recipe_candidates: Vec<String>,
    pub coarse_ingredients: Vec<String>,
    pub activity_stages: Vec<ActivityStage>,
    #[serde(with = "secs::vec")]
    pub major_transitions: Vec<Millis>,
}

impl GlobalSummary {
    pub fn validate(&self) -> Result<(), SemanticError> {
        if self.video_id.is_empty() {
            return Err(SemanticError::Invariant("summary has an empty video id".into()));
        }
        if self.activity_stages.windows(2).any(|w| w[0].span.start > w[1].span.start) {
            return Err(SemanticError::Invariant(format!(
                "activity stages of {} are not sorted by start",
                self.video_id
            )));
        }
        if self.activity_stages.iter().any(|s| s.span.start >= s.span.end) {
            return Err(SemanticError::Invariant("activity stage with empty span".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngredientAddition {
    pub ingredient: String,
    #[serde(with = "secs")]
    pub timestamp: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineChunkRecord {
    pub video_id: String,
    pub span: ChunkSpan,
    pub visible_operations: Vec<String>,
    pub involved_ingredients: Vec<String>,
    pub tool_interactions: Vec<String>,
    pub ingredient_additions: Vec<IngredientAddition>,
    #[serde(with = "secs::vec")]
    pub step_boundaries: Vec<Millis>,
}

impl FineChunkRecord {
    pub fn validate(&self) -> Result<(), SemanticError> {
        if self.span.start >= self.span.end {
            return Err(SemanticError::Invariant(format!("record span {} is empty", self.span)));
        }
        for a in &self.ingredient_additions {
            if !self.span.contains(a.timestamp) {
                return Err(SemanticError::Invariant(format!(
                    "addition of {} at {} lies outside {}",
                    a.ingredient, a.timestamp, self.span
                )));
            }
        }
        if let Some(t) = self.step_boundaries.iter().find(|t| !self.span.contains(**t)) {
            return Err(SemanticError::Invariant(format!(
                "step boundary {t} lies outside {}",
                self.span
            )));
        }
        if self.ingredient_additions.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
            return Err(SemanticError::Invariant("ingredient additions are not sorted".into()));
        }
        Ok(())
    }
}

/// Summary and fine records of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEvidence {
    pub summary: GlobalSummary,
    pub fine: Vec<FineChunkRecord>,
}

impl VideoEvidence {
    /// End of the last fine chunk, i.e. the duration the plan was built for.
    pub fn duration(&self) -> Option<Millis> {
        self.fine.last().map(|r| r.span.end)
    }

    /// Every free-text field, in a fixed order.
    pub fn text_fields(&self) -> impl Iterator<Item = &str> {
        let s = &self.summary;
        s.recipe_candidates
            .iter()
            .chain(&s.coarse_ingredients)
            .map(String::as_str)
            .chain(s.activity_stages.iter().map(|a| a.label.as_str()))
            .chain(self.fine.iter().flat_map(|r| {
                r.visible_operations
                    .iter()
                    .chain(&r.involved_ingredients)
                    .chain(&r.tool_interactions)
                    .map(String::as_str)
                    .chain(r.ingredient_additions.iter().map(|a| a.ingredient.as_str()))
            }))
    }

    fn validate(&self) -> Result<(), SemanticError> {
        self.summary.validate()?;
        for r in &self.fine {
            if r.video_id != self.summary.video_id {
                return Err(SemanticError::Invariant(format!(
                    "fine record for {} filed under {}",
                    r.video_id, self.summary.video_id
                )));
            }
            r.validate()?;
        }
        let (Some(first), Some(last)) = (self.fine.first(), self.fine.last()) else {
            return Ok(());
        };
        let expected = plan_chunks_ms(last.span.end, Millis(first.span.len_ms()))?;
        let actual: Vec<ChunkSpan> = self.fine.iter().map(|r| r.span).collect();
        if expected != actual {
            return Err(SemanticError::Invariant(format!(
                "fine records of {} do not tile [0, {}) in fixed-length chunks",
                self.summary.video_id, last.span.end
            )));
        }
        Ok(())
    }
}

/// Semantic evidence of many videos, keyed by video id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticDb {
    videos: BTreeMap<String, VideoEvidence>,
}

impl SemanticDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, summary: GlobalSummary, fine: Vec<FineChunkRecord>) -> Result<(), SemanticError> {
        let ev = VideoEvidence { summary, fine };
        ev.validate()?;
        self.videos.insert(ev.summary.video_id.clone(), ev);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoEvidence> {
        self.videos.get(video_id)
    }

    pub fn videos(&self) -> impl Iterator<Item = (&str, &VideoEvidence)> {
        self.videos.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

/// Summary of a video plus its fine records intersecting `span`, in order.
pub fn query_semantic<'a>(
    db: &'a SemanticDb,
    video_id: &str,
    span: Option<&ChunkSpan>,
) -> Result<(&'a GlobalSummary, Vec<&'a FineChunkRecord>), SemanticError> {
    let ev = db
        .get(video_id)
        .ok_or_else(|| SemanticError::NotFound(video_id.to_string()))?;
    let records = match span {
        None => ev.fine.iter().collect(),
        Some(q) => {
            // Fine spans are sorted and disjoint: skip to the first one ending after q.start.
            let from = ev.fine.partition_point(|r| r.span.end <= q.start);
            ev.fine[from..]
                .iter()
                .take_while(|r| r.span.start < q.end)
                .collect()
        }
    };
    Ok((&ev.summary, records))
}

/// Instruction templates. Placeholders: `{video_id}`, `{chunk_index}`,
/// `{start_s}`, `{end_s}`, `{frame_count}`, and for the fine phase
/// `{summary}` (the global summary as JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticTemplates {
    pub coarse: String,
    pub fine: String,
}

const DEFAULT_COARSE_TEMPLATE: &str = "\
You are given {frame_count} frames sampled from video {video_id}, covering {start_s}s to {end_s}s (chunk {chunk_index}).
Describe the overall activity. Reply with a single JSON object and nothing else, with exactly these fields:
{\"recipe_candidates\": [string], \"coarse_ingredients\": [string], \"activity_stages\": [{\"label\": string, \"start_s\": number, \"end_s\": number}], \"major_transitions\": [number]}
All times are absolute seconds from the start of the video.";

const DEFAULT_FINE_TEMPLATE: &str = "\
Global summary of video {video_id}:
{summary}

You are given {frame_count} frames covering {start_s}s to {end_s}s (chunk {chunk_index}).
Using the summary as context, record what happens in this chunk. Reply with a single JSON object and nothing else, with exactly these fields:
{\"visible_operations\": [string], \"involved_ingredients\": [string], \"tool_interactions\": [string], \"ingredient_additions\": [{\"ingredient\": string, \"timestamp\": number}], \"step_boundaries\": [number]}
All times are absolute seconds and must lie inside the chunk.";

impl Default for SemanticTemplates {
    fn default() -> Self {
        Self {
            coarse: DEFAULT_COARSE_TEMPLATE.to_string(),
            fine: DEFAULT_FINE_TEMPLATE.to_string(),
        }
    }
}

fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn span_vars(video_id: &str, span: &ChunkSpan, frame_count: usize) -> Vec<(&'static str, String)> {
    vec![
        ("video_id", video_id.to_string()),
        ("chunk_index", span.index.to_string()),
        ("start_s", span.start_s().to_string()),
        ("end_s", span.end_s().to_string()),
        ("frame_count", frame_count.to_string()),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Maximum fine chunks in flight at once.
    pub max_in_flight: usize,
    /// Keep successfully built fine records when some chunks fail.
    pub permissive: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            permissive: false,
        }
    }
}

/// Fine records in chunk order plus the chunks that failed (always empty
/// unless the build was permissive).
#[derive(Debug, Clone, PartialEq)]
pub struct FineBuild {
    pub records: Vec<FineChunkRecord>,
    pub failures: Vec<SemanticError>,
}

/// Runs both phases against a frame source and a summarizer.
pub struct SemanticBuilder<'a> {
    pub frames: &'a dyn FrameProvider,
    pub summarizer: &'a dyn Summarizer,
    pub sampling: SamplingConfig,
    pub templates: SemanticTemplates,
    pub options: BuildOptions,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StageReply {
    label: String,
    start_s: f64,
    end_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CoarseReply {
    recipe_candidates: Vec<String>,
    coarse_ingredients: Vec<String>,
    activity_stages: Vec<StageReply>,
    major_transitions: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdditionReply {
    ingredient: String,
    timestamp: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FineReply {
    visible_operations: Vec<String>,
    involved_ingredients: Vec<String>,
    tool_interactions: Vec<String>,
    ingredient_additions: Vec<AdditionReply>,
    step_boundaries: Vec<f64>,
}

/// Strips one enclosing markdown code fence, if the whole reply is fenced.
fn unfence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return t;
    };
    let body = body.strip_prefix("json").unwrap_or(body);
    body.trim()
}

fn parse_reply<T: serde::de::DeserializeOwned>(phase: Phase, chunk_index: usize, raw: &str) -> Result<T, SemanticError> {
    serde_json::from_str(unfence(raw)).map_err(|e| SemanticError::Schema {
        phase,
        chunk_index,
        message: e.to_string(),
        raw: raw.to_string(),
    })
}

fn push_unique(into: &mut Vec<String>, items: Vec<String>) {
    for item in items {
        let item = item.trim().to_string();
        if item.is_empty() {
            continue;
        }
        if !into.iter().any(|x| x.to_lowercase() == item.to_lowercase()) {
            into.push(item);
        }
    }
}

impl<'a> SemanticBuilder<'a> {
    pub fn new(frames: &'a dyn FrameProvider, summarizer: &'a dyn Summarizer, sampling: SamplingConfig) -> Self {
        Self {
            frames,
            summarizer,
            sampling,
            templates: SemanticTemplates::default(),
            options: BuildOptions::default(),
        }
    }

    fn chunk_frames(&self, phase: Phase, video_id: &str, span: &ChunkSpan, fps: f64) -> Result<Vec<FrameRef>, SemanticError> {
        plan_frames(span, fps)?
            .into_iter()
            .map(|t| {
                self.frames.frame(video_id, t).map_err(|source| SemanticError::Frame {
                    phase,
                    chunk_index: span.index,
                    source,
                })
            })
            .collect()
    }

    /// Coarse pass: one summarizer request per coarse chunk, merged into one
    /// summary (candidates and ingredients deduplicated in first-seen order,
    /// stages and transitions sorted).
    pub fn global_summary(&self, video_id: &str, duration_s: f64) -> Result<GlobalSummary, SemanticError> {
        if video_id.is_empty() {
            return Err(SemanticError::InvalidArgument("video id is empty".into()));
        }
        self.sampling.validate()?;
        let duration = Millis::from_secs_f64(duration_s)?;
        let chunks = plan_chunks(duration_s, self.sampling.coarse_chunk_s)?;
        let mut summary = GlobalSummary {
            video_id: video_id.to_string(),
            recipe_candidates: Vec::new(),
            coarse_ingredients: Vec::new(),
            activity_stages: Vec::new(),
            major_transitions: Vec::new(),
        };
        for span in &chunks {
            let frames = self.chunk_frames(Phase::Coarse, video_id, span, self.sampling.coarse_fps)?;
            let instruction = render(&self.templates.coarse, &span_vars(video_id, span, frames.len()));
            let raw = self
                .summarizer
                .summarize(&frames, &instruction)
                .map_err(|source| SemanticError::Client {
                    phase: Phase::Coarse,
                    chunk_index: span.index,
                    source,
                })?;
            let reply: CoarseReply = parse_reply(Phase::Coarse, span.index, &raw)?;
            let schema = |message: String| SemanticError::Schema {
                phase: Phase::Coarse,
                chunk_index: span.index,
                message,
                raw: raw.clone(),
            };
            push_unique(&mut summary.recipe_candidates, reply.recipe_candidates);
            push_unique(&mut summary.coarse_ingredients, reply.coarse_ingredients);
            for st in reply.activity_stages {
                let s = ChunkSpan::from_secs(st.start_s, st.end_s, 0)
                    .map_err(|e| schema(format!("stage {:?}: {e}", st.label)))?;
                if s.end > duration {
                    return Err(schema(format!("stage {:?} ends after the video", st.label)));
                }
                summary.activity_stages.push(ActivityStage { label: st.label, span: s });
            }
            for t in reply.major_transitions {
                let t = Millis::from_secs_f64(t).map_err(|e| schema(e.to_string()))?;
                if t >= duration {
                    return Err(schema(format!("transition {t} is past the end of the video")));
                }
                summary.major_transitions.push(t);
            }
        }
        summary.activity_stages.sort_by_key(|s| (s.span.start, s.span.end));
        for (i, st) in summary.activity_stages.iter_mut().enumerate() {
            st.span.index = i;
        }
        summary.major_transitions.sort();
        summary.major_transitions.dedup();
        summary.validate()?;
        Ok(summary)
    }

    fn fine_chunk(&self, video_id: &str, span: &ChunkSpan, summary_json: &str) -> Result<FineChunkRecord, SemanticError> {
        let frames = self.chunk_frames(Phase::Fine, video_id, span, self.sampling.fine_fps)?;
        let mut vars = span_vars(video_id, span, frames.len());
        vars.push(("summary", summary_json.to_string()));
        let instruction = render(&self.templates.fine, &vars);
        let raw = self
            .summarizer
            .summarize(&frames, &instruction)
            .map_err(|source| SemanticError::Client {
                phase: Phase::Fine,
                chunk_index: span.index,
                source,
            })?;
        let reply: FineReply = parse_reply(Phase::Fine, span.index, &raw)?;
        let schema = |message: String| SemanticError::Schema {
            phase: Phase::Fine,
            chunk_index: span.index,
            message,
            raw: raw.clone(),
        };
        let in_span = |what: &str, t: f64| -> Result<Millis, SemanticError> {
            let m = Millis::from_secs_f64(t).map_err(|e| schema(e.to_string()))?;
            if !span.contains(m) {
                return Err(schema(format!("{what} at {t}s lies outside {span}")));
            }
            Ok(m)
        };
        let mut additions = reply
            .ingredient_additions
            .into_iter()
            .map(|a| {
                Ok(IngredientAddition {
                    timestamp: in_span(&format!("addition of {:?}", a.ingredient), a.timestamp)?,
                    ingredient: a.ingredient,
                })
            })
            .collect::<Result<Vec<_>, SemanticError>>()?;
        additions.sort_by_key(|a| a.timestamp);
        let mut boundaries = reply
            .step_boundaries
            .into_iter()
            .map(|t| in_span("step boundary", t))
            .collect::<Result<Vec<_>, _>>()?;
        boundaries.sort();
        Ok(FineChunkRecord {
            video_id: video_id.to_string(),
            span: *span,
            visible_operations: reply.visible_operations,
            involved_ingredients: reply.involved_ingredients,
            tool_interactions: reply.tool_interactions,
            ingredient_additions: additions,
            step_boundaries: boundaries,
        })
    }

    /// Fine pass over every fine chunk. Requests may run concurrently (up to
    /// `options.max_in_flight`); records come back in chunk order.
    pub fn fine_records(&self, video_id: &str, duration_s: f64, summary: &GlobalSummary) -> Result<FineBuild, SemanticError> {
        if summary.video_id != video_id {
            return Err(SemanticError::InvalidArgument(format!(
                "summary belongs to {}, not {video_id}",
                summary.video_id
            )));
        }
        self.sampling.validate()?;
        let chunks = plan_chunks(duration_s, self.sampling.fine_chunk_s)?;
        let summary_json = serde_json::to_string(summary).expect("summary serializes");
        let slots: Vec<Mutex<Option<Result<FineChunkRecord, SemanticError>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.options.max_in_flight.clamp(1, chunks.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(span) = chunks.get(i) else { break };
                    let result = self.fine_chunk(video_id, span, &summary_json);
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        let mut records = Vec::with_capacity(chunks.len());
        let mut failures = Vec::new();
        for slot in slots {
            match slot.into_inner().unwrap().expect("every chunk was processed") {
                Ok(r) => records.push(r),
                Err(e) => failures.push(e),
            }
        }
        if !failures.is_empty() && !self.options.permissive {
            return Err(SemanticError::FineChunks { failures });
        }
        Ok(FineBuild { records, failures })
    }

    /// Coarse then fine pass for one video; inserts the result into `db`
    /// only when every chunk succeeded.
    pub fn build_video(&self, db: &mut SemanticDb, video_id: &str, duration_s: f64) -> Result<FineBuild, SemanticError> {
        let summary = self.global_summary(video_id, duration_s)?;
        let build = self.fine_records(video_id, duration_s, &summary)?;
        if build.failures.is_empty() {
            db.insert(summary, build.records.clone())?;
        }
        Ok(build)
    }
}

pub fn build_global_summary(
    video_id: &str,
    duration_s: f64,
    frames: &dyn FrameProvider,
    summarizer: &dyn Summarizer,
    config: &SamplingConfig,
) -> Result<GlobalSummary, SemanticError> {
    SemanticBuilder::new(frames, summarizer, config.clone()).global_summary(video_id, duration_s)
}

pub fn build_fine_records(
    video_id: &str,
    duration_s: f64,
    summary: &GlobalSummary,
    frames: &dyn FrameProvider,
    summarizer: &dyn Summarizer,
    config: &SamplingConfig,
) -> Result<Vec<FineChunkRecord>, SemanticError> {
    SemanticBuilder::new(frames, summarizer, config.clone())
        .fine_records(video_id, duration_s, summary)
        .map(|b| b.records)
}

// ---- persistence ----

#[derive(Debug, Error)]
pub enum SemdbError {
    #[error("semantic db {0} does not exist")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unsupported semdb header {found}")]
    Header { line: usize, found: String },
    #[error("line {line}: semdb version {found} is not supported (expected {SEMDB_VERSION})")]
    VersionMismatch { line: usize, found: u32 },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: SemanticError,
    },
}

impl SemdbError {
    pub fn line(&self) -> Option<usize> {
        match self {
            SemdbError::Header { line, .. }
            | SemdbError::VersionMismatch { line, .. }
            | SemdbError::Malformed { line, .. }
            | SemdbError::Invalid { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Summary(GlobalSummary),
    Fine(FineChunkRecord),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LineRef<'a> {
    Summary(&'a GlobalSummary),
    Fine(&'a FineChunkRecord),
}

/// Serializes the db; videos in id order, each summary followed by its
/// fine records.
pub fn write_semantic<W: Write>(mut w: W, db: &SemanticDb) -> std::io::Result<()> {
    let header = Header {
        format: SEMDB_FORMAT.into(),
        version: SEMDB_VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for ev in db.videos.values() {
        writeln!(w, "{}", serde_json::to_string(&LineRef::Summary(&ev.summary))?)?;
        for r in &ev.fine {
            writeln!(w, "{}", serde_json::to_string(&LineRef::Fine(r))?)?;
        }
    }
    w.flush()
}

pub fn store_semantic(path: &Path, db: &SemanticDb) -> Result<(), SemdbError> {
    let io = |source| SemdbError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io)?;
    write_semantic(BufWriter::new(file), db).map_err(io)
}

pub fn read_semantic<R: BufRead>(r: R) -> Result<SemanticDb, SemdbError> {
    let mut db = SemanticDb::new();
    let mut pending: Option<(usize, VideoEvidence)> = None;
    let finish = |db: &mut SemanticDb, p: Option<(usize, VideoEvidence)>| -> Result<(), SemdbError> {
        if let Some((line, ev)) = p {
            if db.videos.contains_key(&ev.summary.video_id) {
                return Err(SemdbError::Invalid {
                    line,
                    source: SemanticError::Invariant(format!("duplicate video {}", ev.summary.video_id)),
                });
            }
            ev.validate().map_err(|source| SemdbError::Invalid { line, source })?;
            db.videos.insert(ev.summary.video_id.clone(), ev);
        }
        Ok(())
    };
    let mut saw_header = false;
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| SemdbError::Malformed {
            line: n,
            message: e.to_string(),
        })?;
        if !saw_header {
            let header: Header = serde_json::from_str(&line).map_err(|_| SemdbError::Header {
                line: n,
                found: line.clone(),
            })?;
            if header.format != SEMDB_FORMAT {
                return Err(SemdbError::Header { line: n, found: line });
            }
            if header.version != SEMDB_VERSION {
                return Err(SemdbError::VersionMismatch {
                    line: n,
                    found: header.version,
                });
            }
            saw_header = true;
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| SemdbError::Malformed {
            line: n,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Summary(s) => {
                finish(&mut db, pending.take())?;
                pending = Some((n, VideoEvidence { summary: s, fine: Vec::new() }));
            }
            Line::Fine(r) => {
                r.validate().map_err(|source| SemdbError::Invalid { line: n, source })?;
                match pending.as_mut() {
                    Some((_, ev)) if ev.summary.video_id == r.video_id => ev.fine.push(r),
                    _ => {
                        return Err(SemdbError::Invalid {
                            line: n,
                            source: SemanticError::Invariant(format!(
                                "fine record for {} does not follow its summary",
                                r.video_id
                            )),
                        })
                    }
                }
            }
        }
    }
    if !saw_header {
        return Err(SemdbError::Header {
            line: 1,
            found: String::new(),
        });
    }
    finish(&mut db, pending)?;
    Ok(db)
}

pub fn load_semantic(path: &Path) -> Result<SemanticDb, SemdbError> {
    let file = fs::File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            SemdbError::MissingFile(path.to_path_buf())
        } else {
            SemdbError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    read_semantic(BufReader::new(file))
}
