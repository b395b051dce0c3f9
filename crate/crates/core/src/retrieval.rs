//! Query-conditioned retrieval over the visual evidence store.
//!
//! A timestamp `t` is retrieved for a query when the best cosine similarity
//! between any of its proposals `B_t` and any query-term embedding is
//! strictly greater than `tau`. Results of several terms are merged into one
//! sorted, duplicate-free timestamp list, and the best-matching box of each
//! retained timestamp is kept as localized evidence.

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{Answerer, ClientError, FrameRef, TextEncoder};
use crate::sampling::Millis;
use crate::semantic::SemanticDb;
use crate::visual::{BBox, VisualDb};

/// Similarity threshold used when none is configured.
pub const DEFAULT_TAU: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("encoding term {term:?} failed: {source}")]
    Encoder {
        term: String,
        #[source]
        source: ClientError,
    },
}

/// Cosine similarity, accumulated in `f64`. Zero-norm inputs score 0.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::InvalidArgument(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub tau: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

impl RetrievalConfig {
    pub fn new(tau: f64) -> Result<Self, RetrievalError> {
        let cfg = Self { tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(RetrievalError::InvalidArgument(format!(
                "tau must lie in [-1, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Query terms (the object name plus synonyms or broader names) and their
/// text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTermSet {
    terms: Vec<String>,
    embeddings: Vec<Vec<f32>>,
}

impl QueryTermSet {
    pub fn new(terms: Vec<String>, embeddings: Vec<Vec<f32>>) -> Result<Self, RetrievalError> {
        if terms.is_empty() {
            return Err(RetrievalError::InvalidArgument("at least one query term is required".into()));
        }
        if terms.len() != embeddings.len() {
            return Err(RetrievalError::InvalidArgument(format!(
                "{} terms but {} embeddings",
                terms.len(),
                embeddings.len()
            )));
        }
        let mut seen = HashSet::new();
        for t in &terms {
            if !seen.insert(t.to_lowercase()) {
                return Err(RetrievalError::InvalidArgument(format!("duplicate query term {t:?}")));
            }
        }
        Ok(Self { terms, embeddings })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn embeddings(&self) -> &[Vec<f32>] {
        &self.embeddings
    }

    /// Terms of both sets; on a case-folded name clash the first set wins.
    pub fn union(&self, other: &QueryTermSet) -> QueryTermSet {
        let mut out = self.clone();
        for (t, e) in other.terms.iter().zip(&other.embeddings) {
            if !out.terms.iter().any(|x| x.to_lowercase() == t.to_lowercase()) {
                out.terms.push(t.clone());
                out.embeddings.push(e.clone());
            }
        }
        out
    }
}

/// Best-matching proposal of a retained timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    #[serde(rename = "timestamp_ms")]
    pub timestamp: Millis,
    pub bbox: BBox,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEvidence {
    /// Strictly increasing.
    #[serde(rename = "timestamps_ms")]
    pub timestamps: Vec<Millis>,
    /// One per timestamp, same order.
    pub matches: Vec<Match>,
}

impl RetrievedEvidence {
    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }
}

/// Scans every frame group of `video_id` and keeps the timestamps whose
/// maximum proposal-to-term similarity exceeds `tau`. At equal similarity
/// the earliest-ingested proposal provides the box.
pub fn retrieve_timestamps(
    db: &VisualDb,
    video_id: &str,
    terms: &QueryTermSet,
    config: &RetrievalConfig,
) -> Result<RetrievedEvidence, RetrievalError> {
    config.validate()?;
    if let Some(e) = terms.embeddings.iter().find(|e| e.len() != db.dim()) {
        return Err(RetrievalError::InvalidArgument(format!(
            "query embedding has {} components, db has {}",
            e.len(),
            db.dim()
        )));
    }
    let mut out = RetrievedEvidence::default();
    for group in db.groups(video_id) {
        let mut best: Option<(f64, &BBox)> = None;
        for p in &group.proposals {
            for e in &terms.embeddings {
                let s = cosine(&p.embedding, e)?;
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, &p.bbox));
                }
            }
        }
        if let Some((s, bbox)) = best {
            if s > config.tau {
                out.timestamps.push(group.timestamp);
                out.matches.push(Match {
                    timestamp: group.timestamp,
                    bbox: *bbox,
                    similarity: s,
                });
            }
        }
    }
    Ok(out)
}

/// A reference image with the region containing the queried object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceImage {
    pub path: PathBuf,
    pub bbox: BBox,
}

/// Terms proposed for a question, before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedTerms {
    pub terms: Vec<String>,
    /// Set when the model could not be used and the heuristic chose the term.
    pub fallback: bool,
}

/// Text of the request sent to the model to name the queried object.
pub fn term_request(question: &str, choices: &[String], with_image: bool) -> String {
    let mut s = String::new();
    if with_image {
        s.push_str("The attached image region shows the object the question refers to. Name that object.\n");
    } else {
        s.push_str("Name the physical object the question asks about.\n");
    }
    s.push_str(
        "Reply with the object name, optionally followed by synonyms or more general names, \
         separated by commas, and nothing else.\n",
    );
    s.push_str(&format!("Question: {question}\n"));
    for (i, c) in choices.iter().enumerate() {
        s.push_str(&format!("({}) {c}\n", choice_letter(i)));
    }
    s
}

pub(crate) fn choice_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

const MAX_TERM_WORDS: usize = 5;

/// Splits a model reply into terms: a JSON string array, or a comma,
/// semicolon or newline separated list. Returns no terms when the reply
/// looks like prose.
pub fn parse_terms(reply: &str) -> Vec<String> {
    let raw: Vec<String> = match serde_json::from_str::<Vec<String>>(reply.trim()) {
        Ok(v) => v,
        Err(_) => reply.split([',', ';', '\n']).map(str::to_string).collect(),
    };
    let mut out: Vec<String> = Vec::new();
    for t in raw {
        let t = t
            .trim()
            .trim_start_matches(['-', '*', '\u{2022}'])
            .trim()
            .trim_matches(['"', '\'', '`', '.'])
            .trim()
            .to_string();
        if t.is_empty() {
            continue;
        }
        if t.split_whitespace().count() > MAX_TERM_WORDS {
            return Vec::new();
        }
        if !out.iter().any(|x| x.to_lowercase() == t.to_lowercase()) {
            out.push(t);
        }
    }
    out
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "at", "be", "by", "did", "do", "does", "for", "from", "how", "in",
    "is", "it", "its", "of", "on", "or", "the", "this", "that", "to", "was", "were", "what",
    "when", "where", "which", "who", "why", "with",
];

const QUESTION_WORDS: &[&str] = &["What", "Where", "Which", "When", "Who", "Why", "How", "Is", "Are", "Did", "Does", "Do"];

/// Heuristic object term: the longest quoted phrase, else the longest run
/// of capitalized words (ignoring the question's first word), else the last
/// content word.
pub fn heuristic_term(question: &str) -> Option<String> {
    static QUOTED: OnceLock<Regex> = OnceLock::new();
    let quoted = QUOTED.get_or_init(|| {
        Regex::new(r#"(?:^|[\s(\[])(?:"([^"]+)"|'([^']+)'|\u{201c}([^\u{201d}]+)\u{201d}|\u{2018}([^\u{2019}]+)\u{2019})"#)
            .unwrap()
    });
    let best_quoted = quoted
        .captures_iter(question)
        .filter_map(|c| (1..=4).find_map(|i| c.get(i)).map(|m| m.as_str().trim().to_string()))
        .filter(|s| !s.is_empty())
        .max_by_key(|s| s.len());
    if best_quoted.is_some() {
        return best_quoted;
    }

    let words: Vec<&str> = question
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .collect();
    let mut best: Option<Vec<&str>> = None;
    let mut run: Vec<&str> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let capital = w.chars().next().is_some_and(char::is_uppercase);
        if capital && i > 0 && !QUESTION_WORDS.contains(w) {
            run.push(w);
        } else {
            if run.len() > best.as_ref().map_or(0, Vec::len) {
                best = Some(std::mem::take(&mut run));
            }
            run.clear();
        }
    }
    if run.len() > best.as_ref().map_or(0, Vec::len) {
        best = Some(run);
    }
    if let Some(b) = best.filter(|b| !b.is_empty()) {
        return Some(b.join(" "));
    }
    words
        .iter()
        .rev()
        .find(|w| w.len() > 1 && w.chars().all(char::is_alphabetic) && !STOPWORDS.contains(&w.to_lowercase().as_str()))
        .map(|w| w.to_lowercase())
}

/// Asks the model to name the queried object. With a reference image the
/// cropped region is sent for identification. Falls back to
/// [`heuristic_term`] if the client fails or replies with nothing usable.
pub fn extract_query_terms(
    question: &str,
    choices: &[String],
    ref_image: Option<&ReferenceImage>,
    mllm: &dyn Answerer,
) -> ExtractedTerms {
    let frames: Vec<FrameRef> = ref_image
        .map(|r| vec![FrameRef::reference_image(&r.path, Some(r.bbox))])
        .unwrap_or_default();
    let request = term_request(question, choices, ref_image.is_some());
    match mllm.answer_chat(&request, &frames) {
        Ok(reply) => {
            let terms = parse_terms(&reply);
            if !terms.is_empty() {
                return ExtractedTerms { terms, fallback: false };
            }
            log::warn!("object-name reply {reply:?} had no usable term; using heuristic");
        }
        Err(e) => log::warn!("object-name request failed: {e}; using heuristic"),
    }
    ExtractedTerms {
        terms: heuristic_term(question).into_iter().collect(),
        fallback: true,
    }
}

/// Embeds every term with the text encoder.
pub fn embed_terms(terms: &[String], encoder: &dyn TextEncoder) -> Result<QueryTermSet, RetrievalError> {
    let embeddings = terms
        .iter()
        .map(|t| {
            encoder.embed_text(t).map_err(|source| RetrievalError::Encoder {
                term: t.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    QueryTermSet::new(terms.to_vec(), embeddings)
}

/// Lower-cased alphanumeric tokens without stopwords.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Number of distinct query tokens that occur in the video's semantic text.
pub fn overlap_score(db: &SemanticDb, video_id: &str, query_tokens: &BTreeSet<String>) -> usize {
    let Some(ev) = db.get(video_id) else { return 0 };
    let mut vocab = BTreeSet::new();
    for field in ev.text_fields() {
        vocab.extend(tokenize(field));
    }
    query_tokens.intersection(&vocab).count()
}

/// Ranks `candidates` (or every video when `None`) by token overlap with the
/// query, highest first, ties by video id.
pub fn rank_videos(db: &SemanticDb, query_text: &str, candidates: Option<&[String]>) -> Vec<(String, usize)> {
    let tokens = tokenize(query_text);
    let ids: Vec<String> = match candidates {
        Some(c) => {
            let mut c = c.to_vec();
            c.sort();
            c.dedup();
            c
        }
        None => db.videos().map(|(id, _)| id.to_string()).collect(),
    };
    let mut scored: Vec<(String, usize)> = ids
        .into_iter()
        .map(|id| {
            let s = overlap_score(db, &id, &tokens);
            (id, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

/// The `k` videos of the db most likely to hold the answer.
pub fn narrow_videos(db: &SemanticDb, query_text: &str, k: usize) -> Vec<String> {
    rank_videos(db, query_text, None)
        .into_iter()
        .take(k.max(1))
        .map(|(id, _)| id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{Detection, Fixture, FixtureResponse, Op, ScriptedClient};
    use crate::semantic::{GlobalSummary, SemanticDb};

    fn det(e: Vec<f32>) -> Detection {
        Detection {
            bbox: BBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
            score: 0.9,
            embedding: e,
        }
    }

    fn two_frame_db() -> VisualDb {
        let mut db = VisualDb::new(2).unwrap();
        db.ingest_detections("v", Millis(3000), vec![det(vec![1.0, 0.0]), det(vec![0.6, 0.8])]).unwrap();
        db.ingest_detections("v", Millis(7000), vec![det(vec![0.0, 1.0])]).unwrap();
        db
    }

    fn terms(es: &[(&str, Vec<f32>)]) -> QueryTermSet {
        QueryTermSet::new(es.iter().map(|(t, _)| t.to_string()).collect(), es.iter().map(|(_, e)| e.clone()).collect())
            .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.70710678).abs() < 1e-6);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_term_retrieval() {
        let ev = retrieve_timestamps(&two_frame_db(), "v", &terms(&[("mug", vec![1.0, 0.0])]), &RetrievalConfig::default())
            .unwrap();
        assert_eq!(ev.timestamps, vec![Millis(3000)]);
        assert_eq!(ev.matches[0].similarity, 1.0);
    }

    #[test]
    fn multi_term_union() {
        let t = terms(&[("mug", vec![1.0, 0.0]), ("cup", vec![0.0, 1.0])]);
        let ev = retrieve_timestamps(&two_frame_db(), "v", &t, &RetrievalConfig::default()).unwrap();
        assert_eq!(ev.timestamps, vec![Millis(3000), Millis(7000)]);
    }

    #[test]
    fn tau_one_retrieves_nothing() {
        let cfg = RetrievalConfig::new(1.0).unwrap();
        let t = terms(&[("x", vec![0.3, 0.7])]);
        assert!(retrieve_timestamps(&two_frame_db(), "v", &t, &cfg).unwrap().is_empty());
    }

    #[test]
    fn similarity_equal_to_tau_is_excluded() {
        let db = two_frame_db();
        let t = terms(&[("x", vec![0.6, 0.8])]);
        // Best score at t=7000 is cos([0,1], e); pin tau to exactly that value.
        let tau = cosine(&[0.0, 1.0], &[0.6, 0.8]).unwrap();
        let ev = retrieve_timestamps(&db, "v", &t, &RetrievalConfig::new(tau).unwrap()).unwrap();
        assert_eq!(ev.timestamps, vec![Millis(3000)]);
        let below = RetrievalConfig::new(tau - 1e-9).unwrap();
        let ev = retrieve_timestamps(&db, "v", &t, &below).unwrap();
        assert_eq!(ev.timestamps, vec![Millis(3000), Millis(7000)]);
    }

    #[test]
    fn argmax_tie_prefers_first_ingested() {
        let mut db = VisualDb::new(2).unwrap();
        let a = Detection { bbox: BBox::new(0.0, 0.0, 0.2, 0.2).unwrap(), score: 0.9, embedding: vec![1.0, 0.0] };
        let b = Detection { bbox: BBox::new(0.5, 0.5, 0.9, 0.9).unwrap(), score: 0.9, embedding: vec![2.0, 0.0] };
        db.ingest_detections("v", Millis(0), vec![a.clone(), b]).unwrap();
        let ev = retrieve_timestamps(&db, "v", &terms(&[("x", vec![1.0, 0.0])]), &RetrievalConfig::default()).unwrap();
        assert_eq!(ev.matches[0].bbox, a.bbox);
    }

    #[test]
    fn unknown_video_is_empty_and_dims_checked() {
        let db = two_frame_db();
        let cfg = RetrievalConfig::default();
        assert!(retrieve_timestamps(&db, "nope", &terms(&[("x", vec![1.0, 0.0])]), &cfg).unwrap().is_empty());
        assert!(retrieve_timestamps(&db, "v", &terms(&[("x", vec![1.0, 0.0, 0.0])]), &cfg).is_err());
        assert!(RetrievalConfig::new(1.5).is_err());
    }

    #[test]
    fn term_set_invariants() {
        assert!(QueryTermSet::new(vec![], vec![]).is_err());
        assert!(QueryTermSet::new(vec!["a".into()], vec![]).is_err());
        assert!(QueryTermSet::new(vec!["Mug".into(), "mug".into()], vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn extracts_terms_from_model_reply() {
        let q = "Where is the mug after washing?";
        let choices = vec!["sink".to_string(), "shelf".to_string()];
        let mut fx = Fixture::new();
        fx.insert(Op::AnswerChat, &term_request(q, &choices, false), &[], FixtureResponse::Content { content: "mug, cup".into() });
        let got = extract_query_terms(q, &choices, None, &ScriptedClient::new(fx));
        assert_eq!(got, ExtractedTerms { terms: vec!["mug".into(), "cup".into()], fallback: false });
    }

    #[test]
    fn reference_image_is_sent_as_crop() {
        let q = "Where was this object put?";
        let choices = vec!["drawer".to_string(), "hob".to_string()];
        let r = ReferenceImage { path: "refs/q17.jpg".into(), bbox: BBox::new(0.2, 0.2, 0.6, 0.7).unwrap() };
        let frame = FrameRef::reference_image(&r.path, Some(r.bbox));
        let mut fx = Fixture::new();
        fx.insert(Op::AnswerChat, &term_request(q, &choices, true), &[frame], FixtureResponse::Content { content: "whisk".into() });
        let got = extract_query_terms(q, &choices, Some(&r), &ScriptedClient::new(fx));
        assert_eq!(got.terms, vec!["whisk"]);
        assert!(!got.fallback);
    }

    #[test]
    fn falls_back_to_heuristic_when_client_down() {
        let mut fx = Fixture::new();
        let q = "Where did the person leave the 'pepper grinder' after use?";
        fx.insert(Op::AnswerChat, &term_request(q, &[], false), &[], FixtureResponse::Error { error: "503".into() });
        let got = extract_query_terms(q, &[], None, &ScriptedClient::new(fx));
        assert_eq!(got, ExtractedTerms { terms: vec!["pepper grinder".into()], fallback: true });
    }

    #[test]
    fn heuristic_variants() {
        assert_eq!(heuristic_term("Where is the \"big pot\" or the 'lid'?").as_deref(), Some("big pot"));
        assert_eq!(heuristic_term("Where is the Olive Oil bottle?").as_deref(), Some("Olive Oil"));
        assert_eq!(heuristic_term("Where is the colander?").as_deref(), Some("colander"));
        assert_eq!(heuristic_term("What's in it?").as_deref(), None);
    }

    #[test]
    fn parse_terms_styles() {
        assert_eq!(parse_terms("[\"mug\", \"cup\"]"), vec!["mug", "cup"]);
        assert_eq!(parse_terms("- mug\n- Cup\n- cup"), vec!["mug", "Cup"]);
        assert_eq!(parse_terms("whisk."), vec!["whisk"]);
        assert!(parse_terms("I cannot tell what the object in this picture is").is_empty());
    }

    fn sem_db(entries: &[(&str, &str)]) -> SemanticDb {
        let mut db = SemanticDb::new();
        for (id, recipe) in entries {
            db.insert(
                GlobalSummary {
                    video_id: id.to_string(),
                    recipe_candidates: vec![recipe.to_string()],
                    coarse_ingredients: vec![],
                    activity_stages: vec![],
                    major_transitions: vec![],
                },
                vec![],
            )
            .unwrap();
        }
        db
    }

    #[test]
    fn narrowing() {
        let db = sem_db(&[("b-video", "pasta carbonara"), ("a-video", "omelette")]);
        assert_eq!(narrow_videos(&db, "pasta", 1), vec!["b-video"]);
        assert_eq!(narrow_videos(&db, "curry", 2), vec!["a-video", "b-video"]);
        assert_eq!(narrow_videos(&db, "pasta", 10).len(), 2);
        assert!(narrow_videos(&SemanticDb::new(), "pasta", 3).is_empty());
    }
}
