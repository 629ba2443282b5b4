//! The DAG and the three baselines on the same world and seed, with an
//! optional attack mix.
//!
//! cargo run --release --example baselines -- 100 adversary.poisoning=0.2

use dagfed::sim::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().unwrap_or_else(|| "100".into());
    let extra: Vec<String> = args.collect();
    let cfg = ExperimentConfig::default()
        .with_overrides([("iterations", iterations.as_str()), ("pol.enabled", "false")])?
        .with_overrides(extra.iter().filter_map(|a| a.split_once('=')))?;

    println!("framework  final   best   ticks  mean cycle");
    for fw in ["dag", "google", "async", "block"] {
        let out = run_experiment(&cfg.with_overrides([("framework", fw)])?)?;
        let s = &out.summary;
        let cycle = out.metrics.last().map_or(0.0, |r| r.mean_cycle_ticks);
        println!(
            "{fw:<9} {:.3}  {:.3}  {:>6}  {cycle:>10.1}",
            s.final_accuracy, s.best_accuracy, s.end_tick
        );
    }
    Ok(())
}
