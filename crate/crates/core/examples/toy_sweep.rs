//! Runs the small image sweep (baseline, augmentation, ADA, Freeze-D and
//! their combinations) on synthetic blobs and prints the result table.
//! `cargo run --release --example toy_sweep -- [kimg] [out_dir]`

use scarcegan::harness::{run_sweep, ExperimentPlan};

fn main() -> scarcegan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kimg: f64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0.128);
    let out = args.get(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("scarcegan_toy_sweep"));
    let plan = ExperimentPlan::toy_table(&out, kimg);
    let t0 = std::time::Instant::now();
    let report = run_sweep(&plan)?;
    print!("{}", report.to_table());
    println!("{} runs in {:.1}s, outputs in {}", plan.runs.len(), t0.elapsed().as_secs_f64(), out.display());
    Ok(())
}
