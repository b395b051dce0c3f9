//! Builds the semantic evidence for one video with a canned summarizer and
//! writes it as a semdb file.
//!
//! The summarizer here answers from the frame timestamps alone, so the
//! example runs without a model. Swap in an `HttpClient` to use a real
//! endpoint.

use evidence_qa::clients::{ClientError, FrameRef, Summarizer};
use evidence_qa::frames::DirFrameProvider;
use evidence_qa::sampling::SamplingConfig;
use evidence_qa::semantic::{load_semantic, query_semantic, store_semantic, SemanticBuilder, SemanticDb};
use serde_json::json;

struct CannedSummarizer;

fn seconds(frame: &FrameRef) -> f64 {
    let ms: u64 = frame.key.rsplit('@').next().and_then(|m| m.parse().ok()).unwrap_or(0);
    ms as f64 / 1000.0
}

impl Summarizer for CannedSummarizer {
    fn summarize(&self, frames: &[FrameRef], instruction: &str) -> Result<String, ClientError> {
        let first = seconds(&frames[0]);
        let last = seconds(frames.last().unwrap());
        let reply = if instruction.starts_with("Global summary") {
            json!({
                "visible_operations": [format!("stirring near {first:.0}s")],
                "involved_ingredients": ["onion"],
                "tool_interactions": ["wooden spoon"],
                "ingredient_additions": [{"ingredient": "onion", "timestamp": first}],
                "step_boundaries": [],
            })
        } else {
            json!({
                "recipe_candidates": ["onion soup"],
                "coarse_ingredients": ["onion", "stock"],
                "activity_stages": [{"label": "prep", "start_s": first, "end_s": last + 1.0}],
                "major_transitions": [first],
            })
        };
        // Models often fence their JSON; the builder strips it.
        Ok(format!("```json\n{reply}\n```"))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frames = DirFrameProvider::unchecked("frames");
    let builder = SemanticBuilder::new(&frames, &CannedSummarizer, SamplingConfig::default());

    let mut db = SemanticDb::new();
    let built = builder.build_video(&mut db, "soup-01", 185.0)?;
    println!("built {} fine record(s)", built.records.len());

    let dir = std::env::temp_dir().join("evidence-qa-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("soup.semdb");
    store_semantic(&path, &db)?;
    println!("wrote {}\n", path.display());
    print!("{}", std::fs::read_to_string(&path)?);

    let back = load_semantic(&path)?;
    let window = evidence_qa::sampling::ChunkSpan::from_secs(50.0, 70.0, 0)?;
    let (summary, records) = query_semantic(&back, "soup-01", Some(&window))?;
    println!("\nrecipe candidates: {:?}", summary.recipe_candidates);
    for r in records {
        println!("record {}: {:?}", r.span, r.visible_operations);
    }
    Ok(())
}
