//! Evidence-guided answering: route a question to its evidence sources,
//! retrieve, pick a budgeted set of frames, assemble the prompt and parse the
//! answerer's choice.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{Answerer, FrameRef, TextEncoder};
use crate::frames::{FrameError, FrameProvider};
use crate::retrieval::{
    choice_letter, embed_terms, extract_query_terms, rank_videos, retrieve_timestamps, ExtractedTerms,
    ReferenceImage, RetrievalConfig, RetrievalError, RetrievedEvidence,
};
use crate::sampling::{ChunkSpan, Millis, DEFAULT_VISUAL_FPS};
use crate::semantic::{query_semantic, FineChunkRecord, GlobalSummary, SemanticDb, SemanticError};
use crate::tasks::{Category, Task};
use crate::visual::{BBox, VisualDb};

/// Frames per question when the routing table does not say otherwise.
pub const DEFAULT_FRAME_BUDGET: usize = 32;

const DEFAULT_ROUTING: &str = include_str!("../data/routing.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid routing table: {0}")]
    Routing(String),
    #[error("missing evidence: {0}")]
    MissingEvidence(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("reply matches no choice: {raw:?}")]
    Parse { raw: String },
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// One multiple-choice question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub question_id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub task: Task,
    pub video_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_image: Option<ReferenceImage>,
}

impl QuerySpec {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.choices.len() < 2 {
            return Err(InferenceError::InvalidQuery(format!(
                "{}: needs at least two choices",
                self.question_id
            )));
        }
        if self.choices.len() > 26 {
            return Err(InferenceError::InvalidQuery(format!(
                "{}: more choices than letters",
                self.question_id
            )));
        }
        if self.video_ids.is_empty() {
            return Err(InferenceError::InvalidQuery(format!(
                "{}: needs at least one video id",
                self.question_id
            )));
        }
        Ok(())
    }
}

/// Which evidence a question is answered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPlan {
    pub use_semantic: bool,
    pub use_visual: bool,
    pub multi_video: bool,
    pub frame_budget: usize,
}

impl Default for InputPlan {
    fn default() -> Self {
        Self {
            use_semantic: true,
            use_visual: true,
            multi_video: false,
            frame_budget: DEFAULT_FRAME_BUDGET,
        }
    }
}

impl InputPlan {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.use_semantic || self.use_visual) {
            return Err(InferenceError::Routing("plan uses no evidence source".into()));
        }
        if self.frame_budget == 0 {
            return Err(InferenceError::Routing("frame budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteOverride {
    pub use_semantic: Option<bool>,
    pub use_visual: Option<bool>,
    pub multi_video: Option<bool>,
    pub frame_budget: Option<usize>,
}

impl RouteOverride {
    fn apply(&self, plan: &mut InputPlan) {
        if let Some(v) = self.use_semantic {
            plan.use_semantic = v;
        }
        if let Some(v) = self.use_visual {
            plan.use_visual = v;
        }
        if let Some(v) = self.multi_video {
            plan.multi_video = v;
        }
        if let Some(v) = self.frame_budget {
            plan.frame_budget = v;
        }
    }
}

/// Declarative task → plan mapping, normally loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingTable {
    pub default: InputPlan,
    #[serde(default)]
    pub category: BTreeMap<String, RouteOverride>,
    #[serde(default)]
    pub task: BTreeMap<String, RouteOverride>,
}

impl Default for RoutingTable {
    fn default() -> Self {
        Self::from_toml(DEFAULT_ROUTING).expect("bundled routing table is valid")
    }
}

impl RoutingTable {
    pub fn from_toml(text: &str) -> Result<Self, InferenceError> {
        let table: RoutingTable = toml::from_str(text).map_err(|e| InferenceError::Routing(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        self.default.validate()?;
        for name in self.category.keys() {
            name.parse::<Category>().map_err(|e| InferenceError::Routing(e.to_string()))?;
        }
        let extra = self.task.keys().map(|t| Task::new(t.as_str()));
        for t in Task::known().chain(extra) {
            self.merged(&t)
                .validate()
                .map_err(|e| InferenceError::Routing(format!("task {t}: {e}")))?;
        }
        Ok(())
    }

    fn merged(&self, task: &Task) -> InputPlan {
        let mut plan = self.default;
        if let Some(c) = task.category() {
            if let Some(o) = self.category.get(c.name()) {
                o.apply(&mut plan);
            }
        }
        if let Some(o) = self.task.get(task.name()) {
            o.apply(&mut plan);
        }
        plan
    }

    /// Plan for a task; unknown tasks get the default plan.
    pub fn route_task(&self, task: &Task) -> InputPlan {
        let plan = self.merged(task);
        if plan.validate().is_ok() {
            plan
        } else {
            self.default
        }
    }

    /// Overrides the frame budget of every plan.
    pub fn set_frame_budget(&mut self, budget: usize) {
        self.default.frame_budget = budget;
        for o in self.category.values_mut().chain(self.task.values_mut()) {
            o.frame_budget = None;
        }
    }
}

/// Routes with the bundled table.
pub fn route_task(task: &Task) -> InputPlan {
    RoutingTable::default().route_task(task)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedFrame {
    #[serde(rename = "timestamp_ms")]
    pub timestamp: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

/// Picks at most `budget` frames. Retrieved timestamps are subsampled at
/// indices `floor(i * n / budget)`; with nothing retrieved the budget is
/// spread uniformly over `fallback_span`.
pub fn select_frames(retrieved: &RetrievedEvidence, fallback_span: &ChunkSpan, budget: usize) -> Vec<SelectedFrame> {
    let budget = budget.max(1);
    let n = retrieved.timestamps.len();
    let at = |i: usize| SelectedFrame {
        timestamp: retrieved.timestamps[i],
        bbox: retrieved.matches.get(i).map(|m| m.bbox),
    };
    if n > 0 {
        if n <= budget {
            return (0..n).map(at).collect();
        }
        return (0..budget).map(|i| at(i * n / budget)).collect();
    }
    let len = fallback_span.len_ms() as u128;
    let mut out: Vec<SelectedFrame> = Vec::with_capacity(budget);
    for i in 0..budget as u128 {
        let t = Millis(fallback_span.start.0 + (i * len / budget as u128) as u64);
        if out.last().is_some_and(|f| f.timestamp == t) {
            continue;
        }
        out.push(SelectedFrame { timestamp: t, bbox: None });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFrame {
    pub video_id: String,
    #[serde(rename = "timestamp_ms")]
    pub timestamp: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

/// Semantic evidence of one video as handed to the prompt builder.
#[derive(Debug, Clone, Copy)]
pub struct SemanticContext<'a> {
    pub summary: &'a GlobalSummary,
    pub records: &'a [&'a FineChunkRecord],
}

/// Everything the answerer sees for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub instruction: String,
    pub semantic_text: String,
    pub frames: Vec<BundleFrame>,
    pub frame_budget: usize,
    pub enhanced_question: String,
}

impl EvidenceBundle {
    /// The full prompt text sent alongside the frames.
    pub fn prompt(&self) -> String {
        let mut s = self.instruction.clone();
        if !self.semantic_text.is_empty() {
            s.push_str("\n\n## Semantic evidence\n");
            s.push_str(&self.semantic_text);
        }
        if !self.frames.is_empty() {
            s.push_str("\n\n## Frames\n");
            for (i, f) in self.frames.iter().enumerate() {
                s.push_str(&format!("[{}] video {} at {:.3}s", i + 1, f.video_id, f.timestamp.as_secs_f64()));
                if let Some(b) = f.bbox {
                    s.push_str(&format!(" box ({:.3}, {:.3}, {:.3}, {:.3})", b.x0, b.y0, b.x1, b.y1));
                }
                s.push('\n');
            }
        }
        s.push_str("\n\n");
        s.push_str(&self.enhanced_question);
        s
    }
}

fn task_instruction(task: &Task, plan: &InputPlan) -> String {
    let sources = match (plan.use_semantic, plan.use_visual) {
        (true, true) => "structured notes extracted from the whole video and frames selected for this question",
        (true, false) => "structured notes extracted from the whole video",
        _ => "frames selected for this question",
    };
    let category = task.category().map(|c| format!(" ({c})")).unwrap_or_default();
    format!(
        "You are answering a multiple-choice question about a long egocentric kitchen video.\n\
         Task: {task}{category}.\n\
         You are given {sources}. Timestamps are seconds from the start of each video; boxes are normalized (x0, y0, x1, y1)."
    )
}

/// Builds the evidence bundle. Output is a pure function of the inputs.
pub fn assemble_prompt(
    query: &QuerySpec,
    plan: &InputPlan,
    semantic: &[SemanticContext<'_>],
    frames: Vec<BundleFrame>,
) -> Result<EvidenceBundle, InferenceError> {
    query.validate()?;
    if !plan.use_semantic && !semantic.is_empty() {
        return Err(InferenceError::Invariant("semantic evidence given to a visual-only plan".into()));
    }
    if !plan.use_visual && !frames.is_empty() {
        return Err(InferenceError::Invariant("frames given to a semantic-only plan".into()));
    }
    if frames.len() > plan.frame_budget {
        return Err(InferenceError::Invariant(format!(
            "{} frames exceed the budget of {}",
            frames.len(),
            plan.frame_budget
        )));
    }
    let mut frames = frames;
    frames.sort_by(|a, b| (&a.video_id, a.timestamp).cmp(&(&b.video_id, b.timestamp)));

    let mut semantic_text = String::new();
    let mut record_count = 0;
    for ctx in semantic {
        semantic_text.push_str(&format!("### Video {}\n", ctx.summary.video_id));
        semantic_text.push_str("summary: ");
        semantic_text.push_str(&serde_json::to_string(ctx.summary).expect("summary serializes"));
        semantic_text.push('\n');
        for r in ctx.records {
            semantic_text.push_str("chunk: ");
            semantic_text.push_str(&serde_json::to_string(r).expect("record serializes"));
            semantic_text.push('\n');
        }
        record_count += 1 + ctx.records.len();
    }

    let matched = frames.iter().filter(|f| f.bbox.is_some()).count();
    let mut q = format!("Question: {}\n", query.question);
    q.push_str(&format!(
        "Evidence provided: {record_count} semantic record(s), {} frame(s), {matched} located by object retrieval.\n",
        frames.len()
    ));
    q.push_str("Choices:\n");
    for (i, c) in query.choices.iter().enumerate() {
        q.push_str(&format!("({}) {c}\n", choice_letter(i)));
    }
    q.push_str(&format!(
        "Answer with a single letter from A to {}.",
        choice_letter(query.choices.len() - 1)
    ));

    Ok(EvidenceBundle {
        instruction: task_instruction(&query.task, plan),
        semantic_text,
        frames,
        frame_budget: plan.frame_budget,
        enhanced_question: q,
    })
}

/// First standalone choice letter in the reply (case-insensitive, brackets
/// allowed), else a reply equal to one of the choice texts.
pub fn parse_choice(reply: &str, choices: &[String]) -> Result<usize, InferenceError> {
    let n = choices.len();
    for token in reply.split(|c: char| !c.is_alphanumeric()) {
        let mut chars = token.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_ascii_alphabetic() {
                let idx = (c.to_ascii_uppercase() as u8 - b'A') as usize;
                if idx < n {
                    return Ok(idx);
                }
            }
        }
    }
    let norm = |s: &str| s.trim().trim_end_matches('.').trim().to_lowercase();
    let r = norm(reply);
    choices
        .iter()
        .position(|c| norm(c) == r)
        .ok_or_else(|| InferenceError::Parse { raw: reply.to_string() })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFallback {
    /// Record no choice.
    #[default]
    Abstain,
    FirstChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerOptions {
    /// Extra attempts after an unparsable reply or a client error.
    pub retries: u32,
    pub fallback: AnswerFallback,
}

impl Default for AnswerOptions {
    fn default() -> Self {
        Self {
            retries: 1,
            fallback: AnswerFallback::Abstain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerOutcome {
    pub choice_index: Option<usize>,
    pub fallback_used: bool,
    pub attempts: u32,
    pub last_reply: Option<String>,
    pub error: Option<String>,
}

impl AnswerOptions {
    fn fallback_outcome(&self, attempts: u32, last_reply: Option<String>, error: String) -> AnswerOutcome {
        AnswerOutcome {
            choice_index: match self.fallback {
                AnswerFallback::Abstain => None,
                AnswerFallback::FirstChoice => Some(0),
            },
            fallback_used: true,
            attempts,
            last_reply,
            error: Some(error),
        }
    }
}

/// Sends the bundle to the answerer and parses a choice index.
pub fn answer(
    bundle: &EvidenceBundle,
    frames: &[FrameRef],
    choices: &[String],
    answerer: &dyn Answerer,
    options: &AnswerOptions,
) -> Result<AnswerOutcome, InferenceError> {
    if choices.len() < 2 {
        return Err(InferenceError::InvalidQuery("needs at least two choices".into()));
    }
    let prompt = bundle.prompt();
    let mut last_reply = None;
    let mut last_error = String::new();
    for attempt in 1..=options.retries + 1 {
        match answerer.answer_chat(&prompt, frames) {
            Ok(reply) => match parse_choice(&reply, choices) {
                Ok(i) => {
                    return Ok(AnswerOutcome {
                        choice_index: Some(i),
                        fallback_used: false,
                        attempts: attempt,
                        last_reply: Some(reply),
                        error: None,
                    })
                }
                Err(e) => {
                    last_error = e.to_string();
                    last_reply = Some(reply);
                }
            },
            Err(e) => last_error = e.to_string(),
        }
    }
    Ok(options.fallback_outcome(options.retries + 1, last_reply, last_error))
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub question_id: String,
    pub choice_index: Option<usize>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub routing: RoutingTable,
    pub retrieval: RetrievalConfig,
    pub answer: AnswerOptions,
    /// How many candidate videos survive semantic narrowing.
    pub narrow_k: usize,
    /// Frame grid of the extracted frames; fallback frames snap onto it.
    pub frame_fps: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            routing: RoutingTable::default(),
            retrieval: RetrievalConfig::default(),
            answer: AnswerOptions::default(),
            narrow_k: 3,
            frame_fps: DEFAULT_VISUAL_FPS,
        }
    }
}

/// Intermediate state of one question, before the answerer is called.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub plan: InputPlan,
    pub videos: Vec<String>,
    pub terms: Option<ExtractedTerms>,
    pub retrieved: Vec<(String, RetrievedEvidence)>,
    /// Videos whose frames came from the uniform fallback.
    pub fallback_videos: Vec<String>,
    pub bundle: EvidenceBundle,
    pub frame_refs: Vec<FrameRef>,
}

/// The online stage over loaded evidence databases.
pub struct Pipeline<'a> {
    pub semantic: Option<&'a SemanticDb>,
    pub visual: Option<&'a VisualDb>,
    pub frames: &'a dyn FrameProvider,
    pub mllm: &'a dyn Answerer,
    pub encoder: &'a dyn TextEncoder,
    pub settings: PipelineSettings,
}

impl<'a> Pipeline<'a> {
    fn duration(&self, video_id: &str) -> Option<Millis> {
        let step = self.frame_step();
        self.semantic
            .and_then(|db| db.get(video_id))
            .and_then(|ev| ev.duration())
            .or_else(|| self.frames.duration_hint(video_id))
            .or_else(|| self.visual.and_then(|db| db.last_timestamp(video_id)).map(|t| Millis(t.0 + step)))
    }

    fn frame_step(&self) -> u64 {
        ((1000.0 / self.settings.frame_fps).round() as u64).max(1)
    }

    fn query_text(q: &QuerySpec) -> String {
        let mut s = q.question.clone();
        for c in &q.choices {
            s.push(' ');
            s.push_str(c);
        }
        s
    }

    pub fn prepare(&self, q: &QuerySpec) -> Result<Prepared, InferenceError> {
        q.validate()?;
        let mut plan = self.settings.routing.route_task(&q.task);
        if q.video_ids.len() > 1 {
            plan.multi_video = true;
        }

        let videos: Vec<String> = match (plan.multi_video, self.semantic) {
            (true, Some(db)) if q.video_ids.len() > 1 => rank_videos(db, &Self::query_text(q), Some(&q.video_ids))
                .into_iter()
                .take(self.settings.narrow_k.max(1))
                .map(|(id, _)| id)
                .collect(),
            _ => q.video_ids.clone(),
        };

        let mut semantic_hits: Vec<(&GlobalSummary, Vec<&FineChunkRecord>)> = Vec::new();
        if plan.use_semantic {
            let db = self
                .semantic
                .ok_or_else(|| InferenceError::MissingEvidence(format!("{} needs a semantic db", q.task)))?;
            for v in &videos {
                semantic_hits.push(query_semantic(db, v, None)?);
            }
        }

        let mut terms = None;
        let mut retrieved = Vec::new();
        let mut fallback_videos = Vec::new();
        let mut frames = Vec::new();
        if plan.use_visual {
            let vdb = self
                .visual
                .ok_or_else(|| InferenceError::MissingEvidence(format!("{} needs a visual db", q.task)))?;
            let extracted = extract_query_terms(&q.question, &q.choices, q.ref_image.as_ref(), self.mllm);
            let term_set = if extracted.terms.is_empty() {
                None
            } else {
                Some(embed_terms(&extracted.terms, self.encoder)?)
            };
            let active = videos.len().min(plan.frame_budget);
            let per_video = plan.frame_budget / active.max(1);
            for v in videos.iter().take(active) {
                let ev = match &term_set {
                    Some(t) => retrieve_timestamps(vdb, v, t, &self.settings.retrieval)?,
                    None => RetrievedEvidence::default(),
                };
                let duration = self
                    .duration(v)
                    .ok_or_else(|| InferenceError::MissingEvidence(format!("cannot tell the length of video {v}")))?;
                let span = ChunkSpan::new(Millis(0), duration.max(Millis(1)), 0)
                    .map_err(|e| InferenceError::Invariant(e.to_string()))?;
                let mut picked = select_frames(&ev, &span, per_video);
                if ev.is_empty() {
                    fallback_videos.push(v.clone());
                    let step = self.frame_step();
                    for f in &mut picked {
                        f.timestamp = Millis(f.timestamp.0 / step * step);
                    }
                    picked.dedup_by_key(|f| f.timestamp);
                }
                frames.extend(picked.into_iter().map(|f| BundleFrame {
                    video_id: v.clone(),
                    timestamp: f.timestamp,
                    bbox: f.bbox,
                }));
                retrieved.push((v.clone(), ev));
            }
            terms = Some(extracted);
        }

        let contexts: Vec<SemanticContext<'_>> = semantic_hits
            .iter()
            .map(|(s, r)| SemanticContext {
                summary: s,
                records: r.as_slice(),
            })
            .collect();
        let bundle = assemble_prompt(q, &plan, &contexts, frames)?;
        let frame_refs = bundle
            .frames
            .iter()
            .map(|f| self.frames.frame(&f.video_id, f.timestamp).map(|r| r.with_bbox(f.bbox)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Prepared {
            plan,
            videos,
            terms,
            retrieved,
            fallback_videos,
            bundle,
            frame_refs,
        })
    }

    pub fn ask(&self, q: &QuerySpec) -> Result<(Prepared, AnswerOutcome), InferenceError> {
        let prepared = self.prepare(q)?;
        let outcome = answer(&prepared.bundle, &prepared.frame_refs, &q.choices, self.mllm, &self.settings.answer)?;
        Ok((prepared, outcome))
    }

    /// Like [`Pipeline::ask`] but never fails: errors are logged and the
    /// configured answer fallback applies.
    pub fn predict(&self, q: &QuerySpec) -> Prediction {
        match self.ask(q) {
            Ok((_, outcome)) => {
                if let Some(e) = &outcome.error {
                    log::warn!("{}: answer fallback used: {e}", q.question_id);
                }
                Prediction {
                    question_id: q.question_id.clone(),
                    choice_index: outcome.choice_index,
                    fallback_used: outcome.fallback_used,
                }
            }
            Err(e) => {
                log::warn!("{}: {e}", q.question_id);
                let o = self.settings.answer.fallback_outcome(0, None, e.to_string());
                Prediction {
                    question_id: q.question_id.clone(),
                    choice_index: o.choice_index,
                    fallback_used: true,
                }
            }
        }
    }

    /// Predicts every question with up to `workers` in parallel; output is in
    /// input order.
    pub fn predict_all(&self, questions: &[QuerySpec], workers: usize) -> Vec<Prediction> {
        let slots: Vec<Mutex<Option<Prediction>>> = questions.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers.clamp(1, questions.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(q) = questions.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.predict(q));
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every question was predicted"))
            .collect()
    }
}
