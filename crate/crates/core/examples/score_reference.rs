//! Rebuilds the reference per-task accuracies as synthetic predictions,
//! scores them and prints the category report.
//!
//! ```text
//! cargo run --example score_reference -- csv
//! ```

use evidence_qa::eval::{emit_report, replay, score, reference_rows, ReportFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let format: ReportFormat = std::env::args().nth(1).as_deref().unwrap_or("text").parse()?;
    let rows = reference_rows();
    let (predictions, labels) = replay(&rows, 1000);
    println!("{} task(s), {} labeled question(s)", rows.len(), labels.len());
    let report = score(&predictions, &labels)?;
    print!("{}", emit_report(&report, format));
    println!("overall {:.3}", report.overall);
    Ok(())
}
