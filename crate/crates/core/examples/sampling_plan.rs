//! Prints the coarse, fine and visual sampling plans for a video.
//!
//! ```text
//! cargo run --example sampling_plan -- 1500
//! ```

use evidence_qa::sampling::{plan_chunks, plan_frames, SamplingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let duration_s: f64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(1500.0);
    let cfg = SamplingConfig::default();
    cfg.validate()?;

    println!("video of {duration_s}s");
    for (name, chunk_s, fps) in [("coarse", cfg.coarse_chunk_s, cfg.coarse_fps), ("fine", cfg.fine_chunk_s, cfg.fine_fps)] {
        let spans = plan_chunks(duration_s, chunk_s)?;
        let frames: usize = spans.iter().map(|s| plan_frames(s, fps).map(|f| f.len())).sum::<Result<_, _>>()?;
        println!("\n{name}: {} chunk(s) of up to {chunk_s}s at {fps} fps, {frames} frame(s)", spans.len());
        for span in spans.iter().take(3) {
            let ts = plan_frames(span, fps)?;
            let first: Vec<String> = ts.iter().take(4).map(|t| t.to_string()).collect();
            println!("  {span}  {} frame(s): {} ...", ts.len(), first.join(" "));
        }
        if spans.len() > 3 {
            let last = spans.last().unwrap();
            println!("  ...\n  {last}  {} frame(s)", plan_frames(last, fps)?.len());
        }
    }

    let whole = plan_chunks(duration_s, duration_s)?;
    let visual = plan_frames(&whole[0], cfg.visual_fps)?;
    println!("\nvisual ingestion: {} frame(s) at {} fps", visual.len(), cfg.visual_fps);
    Ok(())
}
