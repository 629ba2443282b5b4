//! Runs one experiment from defaults plus `key=value` overrides and prints
//! the summary.
//!
//! cargo run --example full_experiment -- framework=google iterations=50

use std::time::Instant;

use dagfed::sim::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let pairs: Vec<(&str, &str)> = args.iter().filter_map(|a| a.split_once('=')).collect();
    let cfg = ExperimentConfig::default().with_overrides(pairs)?;
    let started = Instant::now();
    let out = run_experiment(&cfg)?;
    let s = &out.summary;
    println!(
        "{} seed {}: {} iterations, {} ticks, final {:.3}, best {:.3} (genesis {:.3}) in {:.1}s",
        s.framework,
        s.seed,
        s.iterations,
        s.end_tick,
        s.final_accuracy,
        s.best_accuracy,
        s.genesis_accuracy,
        started.elapsed().as_secs_f64()
    );
    for (kind, amount) in &s.rewards_by_kind {
        println!("  rewards {kind:<10} {amount}");
    }
    for r in &s.runners {
        println!(
            "  runner {:>2} {:<9} cpu {:<3} bw {:<7} mem {} cycles {:>4} rewards {:>5} balance {}",
            r.index, r.kind, r.cpu, r.bandwidth, r.memory, r.cycles, r.rewards, r.balance
        );
    }
    if let Some(c) = &out.calibration {
        let h = c.honest.iter().copied().fold(0.0, f64::max);
        let f = c.falsified.iter().copied().fold(f64::INFINITY, f64::min);
        println!("  calibration: honest max {h:.4}, falsified min {f:.4}, epsilon {:.4}", c.epsilon);
    }
    if s.settlements > 0 {
        println!("  settlements {} pol {:?}", s.settlements, s.pol);
    }
    if let Some(b) = s.backdoor_success {
        println!("  backdoor success {b:.3}");
    }
    if !s.invariant_failures.is_empty() {
        println!("  invariant failures: {:?}", s.invariant_failures);
    }
    Ok(())
}
