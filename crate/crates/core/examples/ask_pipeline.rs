//! End-to-end question answering over in-memory evidence: semantic records,
//! visual proposals, term extraction, retrieval, frame selection, prompt
//! assembly and answer parsing.

use evidence_qa::clients::{Answerer, ClientError, Detection, FrameRef, TextEncoder};
use evidence_qa::frames::DirFrameProvider;
use evidence_qa::inference::{Pipeline, PipelineSettings, QuerySpec};
use evidence_qa::retrieval::term_request;
use evidence_qa::sampling::{ChunkSpan, Millis};
use evidence_qa::semantic::{FineChunkRecord, GlobalSummary, SemanticDb};
use evidence_qa::tasks::Task;
use evidence_qa::visual::{BBox, VisualDb};

const QUESTION: &str = "Where was the pot when it was first picked up?";

fn choices() -> Vec<String> {
    ["on the stove", "in the sink", "on the counter", "in the cupboard"].map(String::from).to_vec()
}

/// Names the object, then answers "C" when it is shown the pot frame.
struct ToyModel;

impl Answerer for ToyModel {
    fn answer_chat(&self, prompt: &str, frames: &[FrameRef]) -> Result<String, ClientError> {
        if prompt == term_request(QUESTION, &choices(), false) {
            return Ok("pot".into());
        }
        let saw_pot = frames.iter().any(|f| f.key == "kitchen@7000");
        Ok(if saw_pot { "The answer is (C).".into() } else { "Maybe A".into() })
    }
}

struct ToyEncoder;

impl TextEncoder for ToyEncoder {
    fn embed_text(&self, term: &str) -> Result<Vec<f32>, ClientError> {
        Ok(if term == "pot" { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut semantic = SemanticDb::new();
    let summary = GlobalSummary {
        video_id: "kitchen".into(),
        recipe_candidates: vec!["tomato soup".into()],
        coarse_ingredients: vec!["tomato".into()],
        activity_stages: vec![],
        major_transitions: vec![],
    };
    let record = FineChunkRecord {
        video_id: "kitchen".into(),
        span: ChunkSpan::new(Millis(0), Millis(60_000), 0)?,
        visible_operations: vec!["lifting a pot from the counter".into()],
        involved_ingredients: vec![],
        tool_interactions: vec!["pot".into()],
        ingredient_additions: vec![],
        step_boundaries: vec![],
    };
    semantic.insert(summary, vec![record])?;

    let mut visual = VisualDb::new(2)?;
    for (ms, emb) in [(3000, [0.1, 1.0]), (7000, [0.95, 0.1]), (12_000, [0.0, 1.0])] {
        let det = Detection { bbox: BBox::new(0.4, 0.4, 0.7, 0.8)?, score: 0.9, embedding: emb.to_vec() };
        visual.ingest_detections("kitchen", Millis(ms), vec![det])?;
    }

    let frames = DirFrameProvider::unchecked("frames");
    let pipeline = Pipeline {
        semantic: Some(&semantic),
        visual: Some(&visual),
        frames: &frames,
        mllm: &ToyModel,
        encoder: &ToyEncoder,
        settings: PipelineSettings::default(),
    };
    let q = QuerySpec {
        question_id: "demo-1".into(),
        question: QUESTION.into(),
        choices: choices(),
        task: Task::new("Object Location"),
        video_ids: vec!["kitchen".into()],
        ref_image: None,
    };

    let (prepared, outcome) = pipeline.ask(&q)?;
    println!("plan: {:?}", prepared.plan);
    println!("terms: {:?}", prepared.terms.as_ref().map(|t| &t.terms));
    for (video, ev) in &prepared.retrieved {
        let stamps: Vec<String> = ev.timestamps.iter().map(|t| t.to_string()).collect();
        println!("retrieved from {video}: {}", stamps.join(" "));
    }
    println!("\n--- prompt ---\n{}\n--------------", prepared.bundle.prompt());
    println!("reply {:?} -> choice {:?}", outcome.last_reply, outcome.choice_index.map(|i| &q.choices[i]));
    Ok(())
}
