//! One attack mix run with proof-of-learning on and off. Shows rewards by
//! behavior, challenge outcomes, and backdoor success when present.
//!
//! cargo run --release --example attacks -- stealing=0.2 colluding=0.2
//! cargo run --release --example attacks -- backdoor=0.2

use dagfed::adversary::AdversaryKind;
use dagfed::sim::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut mix: Vec<(String, String)> = args
        .iter()
        .filter_map(|a| a.split_once('='))
        .map(|(k, v)| (format!("adversary.{k}"), v.to_string()))
        .collect();
    if mix.is_empty() {
        mix = vec![
            ("adversary.stealing".into(), "0.2".into()),
            ("adversary.colluding".into(), "0.2".into()),
        ];
    }
    let base = ExperimentConfig::default()
        .with_overrides([("runners.count", "15"), ("iterations", "60"), ("pol.audit_fraction", "1.0")])?
        .with_overrides(mix.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;

    for pol in ["true", "false"] {
        let out = run_experiment(&base.with_overrides([("pol.enabled", pol)])?)?;
        let s = &out.summary;
        println!("PoL {pol}: final accuracy {:.3}", s.final_accuracy);
        for kind in AdversaryKind::ALL {
            let n = s.runners.iter().filter(|r| r.kind == kind).count();
            if n == 0 {
                continue;
            }
            let total = s.rewards_by_kind.get(&kind).copied().unwrap_or(0);
            let positive = s.runners.iter().filter(|r| r.kind == kind && r.rewards > 0).count();
            println!(
                "  {:<10} {n:>2} runners, {total:>5} tokens, {positive} with positive rewards",
                kind.tag()
            );
        }
        println!(
            "  challenges {}, invalidated {}, honest invalidated {}",
            s.pol.challenges, s.pol.invalidated, s.pol.honest_invalidated
        );
        if let Some(b) = s.backdoor_success {
            println!("  backdoor success {b:.3}");
        }
    }
    Ok(())
}
