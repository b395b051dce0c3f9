//! Fills a small visual evidence database, saves it in the binary format
//! and prints an annotated hex dump of the header and the first record.

use evidence_qa::clients::Detection;
use evidence_qa::sampling::Millis;
use evidence_qa::visual::{load_visual, persist_visual, BBox, VisualDb};

fn det(score: f32, embedding: [f32; 3]) -> Detection {
    Detection { bbox: BBox::new(0.25, 0.5, 0.75, 1.0).unwrap(), score, embedding: embedding.to_vec() }
}

fn dump(label: &str, bytes: &[u8]) {
    let hex: Vec<String> = bytes.iter().map(|b| format!("{b:02x}")).collect();
    println!("  {:<22} {}", label, hex.join(" "));
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut db = VisualDb::new(3)?;
    let kept = db.ingest_detections("pan-01", Millis(0), vec![det(0.9, [1.0, 0.0, 0.0]), det(0.1, [0.0, 1.0, 0.0])])?;
    println!("t=0s kept {kept} of 2 detections (threshold {})", db.detector_threshold());
    db.ingest_detections("pan-01", Millis(1000), vec![det(0.3, [0.0, 0.0, 1.0])])?;
    db.register_video("pan-02");

    let path = std::env::temp_dir().join("evidence-qa-example.vevd");
    persist_visual(&path, &db)?;
    let bytes = std::fs::read(&path)?;
    println!("wrote {} byte(s), {} proposal(s), record size {}", bytes.len(), db.proposal_count(), db.record_size());

    println!("\nheader");
    dump("magic", &bytes[0..4]);
    dump("version u32", &bytes[4..8]);
    dump("dim u32", &bytes[8..12]);
    dump("threshold f32", &bytes[12..16]);
    dump("video count u32", &bytes[16..20]);
    let mut at = 20;
    for _ in db.videos() {
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into()?) as usize;
        dump("  name len u32", &bytes[at..at + 4]);
        dump(&format!("  name {:?}", std::str::from_utf8(&bytes[at + 4..at + 4 + len])?), &bytes[at + 4..at + 4 + len]);
        at += 4 + len;
    }
    println!("first record at offset {at}");
    let r = &bytes[at..at + db.record_size()];
    dump("video index u32", &r[0..4]);
    dump("timestamp ms u64", &r[4..12]);
    dump("box 4 x f32", &r[12..28]);
    dump("score f32", &r[28..32]);
    dump("embedding 3 x f32", &r[32..44]);
    assert_eq!(bytes.len(), at + db.proposal_count() * db.record_size());

    let back = load_visual(&path)?;
    assert!(back.bit_eq(&db));
    println!("\nreloaded bit-identical; videos {:?}", back.videos());
    Ok(())
}
