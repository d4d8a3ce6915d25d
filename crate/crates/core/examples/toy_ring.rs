//! Trains the vector-mode GAN on an 8-Gaussian ring and prints the KID
//! trajectory. `cargo run --example toy_ring -- [seed] [gamma] [steps]`

use scarcegan::data::{toy, Dataset};
use scarcegan::training::{train, TrainConfig};

fn main() -> scarcegan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = TrainConfig::toy_vector();
    cfg.seed = seed;
    cfg.gamma = args.get(1).and_then(|s| s.parse().ok());
    let steps: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000.0);
    cfg.total_kimg = steps * cfg.minibatch() as f64 / 1000.0;
    cfg.snapshot_interval_kimg = cfg.total_kimg / 8.0;
    if let Some(n) = args.get(3).and_then(|s| s.parse().ok()) {
        cfg.metric_fakes = n;
    }

    let data = Dataset::new(toy::ring(200, 1000 + seed), false)?;
    let t0 = std::time::Instant::now();
    let report = train(cfg.clone(), data, None)?;
    for m in &report.history {
        println!("step {:5} kid {:.6} loss_d {:?} loss_g {:?}", m.step, m.kid.unwrap_or(f64::NAN), m.loss_d, m.loss_g);
    }
    println!(
        "gamma {} initial {:.6} final {:.6} ({:.1}s)",
        cfg.gamma(),
        report.initial_kid().unwrap_or(f64::NAN),
        report.final_kid().unwrap_or(f64::NAN),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
