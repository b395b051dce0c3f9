//! Records model exchanges into a fixture file and replays them offline.
//!
//! Fingerprints cover the role, the request text and frame identities, not
//! frame paths, so a fixture keeps matching after frames move.

use evidence_qa::clients::{
    fingerprint, Answerer, Fixture, FixtureResponse, FrameRef, Op, ScriptedClient, TextEncoder,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frames = [FrameRef::video_frame("soup-01", 42_000, "/data/frames/soup-01/42000.jpg")];
    let mut fixture = Fixture::new();
    let fp = fixture.insert(Op::AnswerChat, "Which pot?", &frames, FixtureResponse::Content { content: "B".into() });
    fixture.insert(Op::EmbedText, "pot", &[], FixtureResponse::Embedding { embedding: vec![0.0, 1.0] });
    println!("answer fingerprint {fp}");

    let path = std::env::temp_dir().join("evidence-qa-example.fixture.jsonl");
    fixture.save(&path)?;
    println!("saved {} entr(ies) to {}", fixture.len(), path.display());

    let client = ScriptedClient::new(Fixture::load(&path)?);
    let moved = [FrameRef::video_frame("soup-01", 42_000, "/elsewhere/42000.jpg")];
    assert_eq!(fingerprint(Op::AnswerChat, "Which pot?", &moved), fp);
    println!("replayed answer: {}", client.answer_chat("Which pot?", &moved)?);
    println!("replayed embedding: {:?}", client.embed_text("pot")?);

    match client.answer_chat("Which pan?", &moved) {
        Err(e) => println!("unrecorded request: {e}"),
        Ok(r) => println!("unexpected reply {r}"),
    }
    println!("unused entries: {}", client.fixture().unconsumed().len());
    Ok(())
}
