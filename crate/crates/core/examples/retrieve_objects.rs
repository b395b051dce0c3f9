//! Query-conditioned retrieval over a toy visual database: which
//! timestamps show a cutting board, and how the answer moves with tau.

use evidence_qa::clients::Detection;
use evidence_qa::retrieval::{retrieve_timestamps, QueryTermSet, RetrievalConfig};
use evidence_qa::sampling::Millis;
use evidence_qa::visual::{BBox, VisualDb};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Four concept axes: board, knife, pot, hand.
    let scenes: [(u64, [f32; 4]); 6] = [
        (0, [0.9, 0.1, 0.0, 0.3]),
        (1000, [0.2, 0.9, 0.0, 0.4]),
        (2000, [0.0, 0.0, 1.0, 0.1]),
        (3000, [0.5, 0.5, 0.0, 0.5]),
        (4000, [0.05, 0.0, 0.3, 1.0]),
        (5000, [1.0, 0.0, 0.0, 0.0]),
    ];
    let mut db = VisualDb::new(4)?;
    for (ms, emb) in scenes {
        let det = Detection { bbox: BBox::new(0.1, 0.2, 0.6, 0.8)?, score: 0.8, embedding: emb.to_vec() };
        db.ingest_detections("prep-01", Millis(ms), vec![det])?;
    }

    let board = QueryTermSet::new(vec!["cutting board".into()], vec![vec![1.0, 0.0, 0.0, 0.0]])?;
    for tau in [0.0, 0.2, 0.5, 0.9] {
        let ev = retrieve_timestamps(&db, "prep-01", &board, &RetrievalConfig::new(tau)?)?;
        let hits: Vec<String> = ev.matches.iter().map(|m| format!("{} ({:.3})", m.timestamp, m.similarity)).collect();
        println!("tau {tau:<4} {} hit(s): {}", ev.len(), hits.join(", "));
    }

    // A second term can only add timestamps.
    let knife = QueryTermSet::new(vec!["knife".into()], vec![vec![0.0, 1.0, 0.0, 0.0]])?;
    let both = board.union(&knife);
    let cfg = RetrievalConfig::new(0.5)?;
    let ev = retrieve_timestamps(&db, "prep-01", &both, &cfg)?;
    let stamps: Vec<String> = ev.timestamps.iter().map(|t| t.to_string()).collect();
    println!("\n{:?} at tau 0.5: {}", both.terms(), stamps.join(" "));
    Ok(())
}
