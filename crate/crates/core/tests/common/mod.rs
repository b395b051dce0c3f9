//! Synthetic corpus shared by the integration tests: three videos with planted
//! object proposals, questions whose answers depend on seeing the planted
//! frame, and model stand-ins that read only their inputs.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use evidence_qa::clients::{
    Answerer, ClientError, Fixture, FixtureResponse, FrameRef, Op, TextEncoder,
};
use evidence_qa::eval::LabeledItem;
use evidence_qa::inference::QuerySpec;
use evidence_qa::sampling::{ChunkSpan, Millis};
use evidence_qa::semantic::{FineChunkRecord, GlobalSummary, SemanticDb};
use evidence_qa::tasks::Task;
use evidence_qa::visual::{BBox, VisualDb};
use evidence_qa::clients::Detection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = 16;
pub const VIDEO_MS: u64 = 120_000;
pub const VIDEOS: [&str; 3] = ["kitchen-a", "kitchen-b", "kitchen-c"];

const OBJECTS: [&str; 20] = [
    "whisk", "colander", "ladle", "grater", "rolling pin", "peeler", "spatula", "tongs", "kettle", "toaster",
    "cutting board", "measuring jug", "salad spinner", "pepper grinder", "oven mitt", "frying pan", "sieve",
    "garlic press", "mixing bowl", "can opener",
];

const OBJECT_TASKS: [&str; 4] = [
    "Object Location",
    "Object Contents Retrieval",
    "Stationary Object Localization",
    "Fixture Location",
];

pub struct Planted {
    pub video_id: String,
    pub timestamp: Millis,
    pub term: String,
    pub gold_index: usize,
}

pub struct Corpus {
    pub semantic: SemanticDb,
    pub visual: VisualDb,
    pub questions: Vec<QuerySpec>,
    pub labels: Vec<LabeledItem>,
    pub planted: BTreeMap<String, Planted>,
    pub term_vectors: BTreeMap<String, Vec<f32>>,
    /// Largest cosine between a planted proposal and its question's term.
    pub max_planted_similarity: f64,
    pub min_planted_similarity: f64,
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Timestamps the uniform fallback lands on for a 32-frame budget, snapped
/// down to the one-second frame grid.
pub fn fallback_grid(budget: u64) -> BTreeSet<u64> {
    (0..budget).map(|i| i * VIDEO_MS / budget / 1000 * 1000).collect()
}

fn semantic_for(video_id: &str) -> (GlobalSummary, Vec<FineChunkRecord>) {
    let summary = GlobalSummary {
        video_id: video_id.to_string(),
        recipe_candidates: vec![format!("{video_id} stew")],
        coarse_ingredients: vec!["onion".into(), "stock".into()],
        activity_stages: vec![],
        major_transitions: vec![Millis(60_000)],
    };
    let fine = (0..2)
        .map(|i| FineChunkRecord {
            video_id: video_id.to_string(),
            span: ChunkSpan::new(Millis(i * 60_000), Millis((i + 1) * 60_000), i as usize).unwrap(),
            visible_operations: vec!["chopping".into()],
            involved_ingredients: vec!["onion".into()],
            tool_interactions: vec![],
            ingredient_additions: vec![],
            step_boundaries: vec![],
        })
        .collect();
    (summary, fine)
}

fn unit_box() -> BBox {
    BBox::new(0.25, 0.25, 0.75, 0.75).unwrap()
}

impl Corpus {
    pub fn generate(seed: u64, question_count: usize) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let avoid = fallback_grid(32);

        let mut term_vectors = BTreeMap::new();
        for name in OBJECTS.iter().take(question_count) {
            // Terms live in the first half of the space; distractors in the
            // second half are orthogonal to every term.
            let mut v = vec![0f32; DIM];
            for x in v.iter_mut().take(DIM / 2) {
                *x = rng.random_range(-1.0..1.0);
            }
            term_vectors.insert(name.to_string(), v);
        }

        let mut planted_at: BTreeMap<String, BTreeMap<u64, (String, Vec<f32>)>> = BTreeMap::new();
        let mut planted = BTreeMap::new();
        let mut questions = Vec::new();
        let mut labels = Vec::new();
        let (mut max_sim, mut min_sim) = (f64::MIN, f64::MAX);
        for (i, name) in OBJECTS.iter().take(question_count).enumerate() {
            let video = VIDEOS[i % VIDEOS.len()].to_string();
            let taken = planted_at.entry(video.clone()).or_default();
            let ts = loop {
                let t = rng.random_range(1..VIDEO_MS / 1000) * 1000;
                if !avoid.contains(&t) && !taken.contains_key(&t) {
                    break t;
                }
            };
            let term = &term_vectors[*name];
            let emb: Vec<f32> = term.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect();
            let s = cos(&emb, term);
            max_sim = max_sim.max(s);
            min_sim = min_sim.min(s);
            taken.insert(ts, (name.to_string(), emb));

            let qid = format!("q{i:02}");
            let gold_index = rng.random_range(0..4);
            let task = Task::new(OBJECT_TASKS[i % OBJECT_TASKS.len()]);
            questions.push(QuerySpec {
                question_id: qid.clone(),
                question: format!("Where was the '{name}' when it was first picked up?"),
                choices: ["counter", "sink", "drawer", "shelf"].iter().map(|s| s.to_string()).collect(),
                task: task.clone(),
                video_ids: vec![video.clone()],
                ref_image: None,
            });
            labels.push(LabeledItem {
                question_id: qid.clone(),
                category: task.category().unwrap(),
                task,
                gold_index,
            });
            planted.insert(
                qid,
                Planted {
                    video_id: video,
                    timestamp: Millis(ts),
                    term: name.to_string(),
                    gold_index,
                },
            );
        }

        let mut visual = VisualDb::new(DIM).unwrap();
        for video in VIDEOS {
            let here = planted_at.remove(video).unwrap_or_default();
            for t in (0..VIDEO_MS).step_by(1000) {
                let mut dets = Vec::new();
                for _ in 0..2 {
                    let mut e = vec![0f32; DIM];
                    for x in e.iter_mut().skip(DIM / 2) {
                        *x = rng.random_range(-1.0..1.0);
                    }
                    dets.push(Detection {
                        bbox: unit_box(),
                        score: rng.random_range(0.0..1.0),
                        embedding: e,
                    });
                }
                if let Some((_, emb)) = here.get(&t) {
                    dets.push(Detection {
                        bbox: BBox::new(0.1, 0.2, 0.3, 0.4).unwrap(),
                        score: 0.9,
                        embedding: emb.clone(),
                    });
                }
                visual.ingest_detections(video, Millis(t), dets).unwrap();
            }
        }

        let mut semantic = SemanticDb::new();
        for v in VIDEOS {
            let (s, f) = semantic_for(v);
            semantic.insert(s, f).unwrap();
        }

        Corpus {
            semantic,
            visual,
            questions,
            labels,
            planted,
            term_vectors,
            max_planted_similarity: max_sim,
            min_planted_similarity: min_sim,
        }
    }

    pub fn answerer(&self) -> GateAnswerer<'_> {
        GateAnswerer { corpus: self }
    }

    pub fn encoder(&self) -> MapEncoder<'_> {
        MapEncoder { corpus: self }
    }
}

/// Names the queried object on term requests; on answer requests replies
/// with the gold letter only when the planted frame is among its images.
pub struct GateAnswerer<'a> {
    corpus: &'a Corpus,
}

impl GateAnswerer<'_> {
    fn find(&self, prompt: &str) -> Option<(&QuerySpec, &Planted)> {
        self.corpus
            .questions
            .iter()
            .find(|q| prompt.contains(&format!("Question: {}\n", q.question)))
            .map(|q| (q, &self.corpus.planted[&q.question_id]))
    }
}

impl Answerer for GateAnswerer<'_> {
    fn answer_chat(&self, prompt: &str, frames: &[FrameRef]) -> Result<String, ClientError> {
        let (_, planted) = self
            .find(prompt)
            .ok_or_else(|| ClientError::Remote("prompt names no known question".into()))?;
        if prompt.starts_with("Name the physical object") {
            return Ok(planted.term.clone());
        }
        let key = format!("{}@{}", planted.video_id, planted.timestamp.0);
        let seen = frames.iter().any(|f| f.key == key);
        let index = if seen { planted.gold_index } else { (planted.gold_index + 1) % 4 };
        Ok(format!("The answer is ({}).", (b'A' + index as u8) as char))
    }
}

pub struct MapEncoder<'a> {
    corpus: &'a Corpus,
}

impl TextEncoder for MapEncoder<'_> {
    fn embed_text(&self, term: &str) -> Result<Vec<f32>, ClientError> {
        self.corpus
            .term_vectors
            .get(term)
            .cloned()
            .ok_or_else(|| ClientError::Remote(format!("unknown term {term}")))
    }
}

/// Wraps model stand-ins and records every exchange as a fixture entry.
pub struct Recorder<'a> {
    pub answerer: &'a dyn Answerer,
    pub encoder: &'a dyn TextEncoder,
    pub fixture: Mutex<Fixture>,
}

impl<'a> Recorder<'a> {
    pub fn new(answerer: &'a dyn Answerer, encoder: &'a dyn TextEncoder) -> Self {
        Self {
            answerer,
            encoder,
            fixture: Mutex::new(Fixture::new()),
        }
    }

    pub fn save(&self, path: &Path) {
        self.fixture.lock().unwrap().save(path).unwrap();
    }
}

impl Answerer for Recorder<'_> {
    fn answer_chat(&self, prompt: &str, frames: &[FrameRef]) -> Result<String, ClientError> {
        let r = self.answerer.answer_chat(prompt, frames);
        let response = match &r {
            Ok(c) => FixtureResponse::Content { content: c.clone() },
            Err(e) => FixtureResponse::Error { error: e.to_string() },
        };
        self.fixture.lock().unwrap().insert(Op::AnswerChat, prompt, frames, response);
        r
    }
}

impl TextEncoder for Recorder<'_> {
    fn embed_text(&self, term: &str) -> Result<Vec<f32>, ClientError> {
        let r = self.encoder.embed_text(term)?;
        self.fixture.lock().unwrap().insert(
            Op::EmbedText,
            term,
            &[],
            FixtureResponse::Embedding { embedding: r.clone() },
        );
        Ok(r)
    }
}

/// Writes a predictions-ready corpus to `dir`: semdb, visdb, questions and
/// labels files.
pub fn write_corpus(corpus: &Corpus, dir: &Path) {
    evidence_qa::semantic::store_semantic(&dir.join("corpus.semdb"), &corpus.semantic).unwrap();
    evidence_qa::visual::persist_visual(&dir.join("corpus.vevd"), &corpus.visual).unwrap();
    let q = std::fs::File::create(dir.join("questions.jsonl")).unwrap();
    evidence_qa::cli::write_jsonl(q, &corpus.questions).unwrap();
    let l = std::fs::File::create(dir.join("labels.jsonl")).unwrap();
    evidence_qa::cli::write_jsonl(l, &corpus.labels).unwrap();
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = evidence_qa::cli::run(std::iter::once("evidence-qa").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// One detection as generated, before the db groups it.
#[derive(Debug, Clone)]
pub struct RawProposal {
    pub video_id: String,
    pub timestamp: u64,
    pub score: f32,
    pub embedding: Vec<f32>,
}

pub struct RandomDb {
    pub db: VisualDb,
    pub raw: Vec<RawProposal>,
    pub videos: Vec<String>,
    pub terms: Vec<Vec<f32>>,
    pub threshold: f32,
}

/// A random visual db of at most `max_proposals` detections whose
/// embeddings mix a random query term with noise, so similarities cover the
/// whole range. Some detections fall below the detector threshold.
pub fn random_db(rng: &mut ChaCha8Rng, max_proposals: usize, dim: usize) -> RandomDb {
    let terms: Vec<Vec<f32>> = (0..rng.random_range(1..=3))
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let videos: Vec<String> = (0..rng.random_range(1..=3)).map(|i| format!("vid{i}")).collect();
    let total = rng.random_range(0..=max_proposals);
    let threshold = 0.3;
    let mut raw = Vec::with_capacity(total);
    let mut clock: BTreeMap<String, u64> = BTreeMap::new();
    for _ in 0..total {
        let video = videos[rng.random_range(0..videos.len())].clone();
        let t = clock.entry(video.clone()).or_insert(0);
        if rng.random_bool(0.6) {
            *t += rng.random_range(1..=3) * 1000;
        }
        let base = &terms[rng.random_range(0..terms.len())];
        let alpha: f32 = rng.random_range(-1.0..2.0);
        let embedding: Vec<f32> = base.iter().map(|x| alpha * x + rng.random_range(-1.0f32..1.0)).collect();
        raw.push(RawProposal {
            video_id: video,
            timestamp: *t,
            score: rng.random_range(0.0..1.0),
            embedding,
        });
    }
    let mut db = VisualDb::with_threshold(dim, threshold).unwrap();
    for p in &raw {
        db.ingest_detections(
            &p.video_id,
            Millis(p.timestamp),
            vec![Detection {
                bbox: unit_box(),
                score: p.score,
                embedding: p.embedding.clone(),
            }],
        )
        .unwrap();
    }
    RandomDb { db, raw, videos, terms, threshold }
}

/// Reference retrieval: every kept raw proposal against every term.
pub fn oracle_retrieve(raw: &[RawProposal], threshold: f32, video_id: &str, terms: &[Vec<f32>], tau: f64) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    for p in raw {
        if p.video_id != video_id || p.score < threshold {
            continue;
        }
        for t in terms {
            if oracle_cosine(&p.embedding, t) > tau {
                out.insert(p.timestamp);
            }
        }
    }
    out
}

pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// A random semantic db whose fine records tile each video's duration.
pub fn random_semantic(rng: &mut ChaCha8Rng) -> SemanticDb {
    const WORDS: [&str; 8] = ["onion", "crème fraîche", "pan, hot", "\"quoted\"", "tab\there", "stir", "", "lid"];
    let words = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.random_range(0..4))
            .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
            .filter(|w| !w.is_empty())
            .collect()
    };
    let mut db = SemanticDb::new();
    for v in 0..rng.random_range(0..4) {
        let id = format!("video-{v}");
        let duration = rng.random_range(1..=3_600_000u64);
        let chunk = rng.random_range(1..=120u64) * 1000;
        let spans = evidence_qa::sampling::plan_chunks_ms(Millis(duration), Millis(chunk)).unwrap();
        let fine = spans
            .iter()
            .map(|span| {
                let mut adds: Vec<evidence_qa::semantic::IngredientAddition> = (0..rng.random_range(0..3))
                    .map(|_| evidence_qa::semantic::IngredientAddition {
                        ingredient: "salt".into(),
                        timestamp: Millis(rng.random_range(span.start.0..span.end.0)),
                    })
                    .collect();
                adds.sort_by_key(|a| a.timestamp);
                FineChunkRecord {
                    video_id: id.clone(),
                    span: *span,
                    visible_operations: words(rng),
                    involved_ingredients: words(rng),
                    tool_interactions: words(rng),
                    ingredient_additions: adds,
                    step_boundaries: vec![Millis(rng.random_range(span.start.0..span.end.0))],
                }
            })
            .collect();
        let summary = GlobalSummary {
            video_id: id,
            recipe_candidates: words(rng),
            coarse_ingredients: words(rng),
            activity_stages: vec![evidence_qa::semantic::ActivityStage {
                label: "prep".into(),
                span: ChunkSpan::new(Millis(0), Millis(duration), 0).unwrap(),
            }],
            major_transitions: vec![Millis(rng.random_range(0..duration))],
        };
        db.insert(summary, fine).unwrap();
    }
    db
}
