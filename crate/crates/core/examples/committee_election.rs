//! Stake-weighted committee election over many seeds: how often each user
//! sits on the committee, and proof that a broke user never does.
//!
//! cargo run --release --example committee_election

use dagfed::crypto::{hash, KeyRing, UserId};
use dagfed::settlement::{elect_from_balances, verify_committee};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keys = KeyRing::derive(3, 10);
    let size = 4;
    let rounds = 5_000u64;
    // User 0 holds nothing; 1..=3 hold three times the rest.
    let balances: Vec<(UserId, u64)> = keys
        .ids()
        .map(|u| {
            let b = match u.index {
                0 => 0,
                1..=3 => 30,
                _ => 10,
            };
            (u, b)
        })
        .collect();

    let mut seats = vec![0u64; keys.len()];
    let mut leads = vec![0u64; keys.len()];
    for s in 0..rounds {
        let c = elect_from_balances(&keys, &balances, &hash(&s.to_le_bytes()), size)?;
        assert!(verify_committee(&c));
        for m in &c.members {
            seats[m.index as usize] += 1;
        }
        leads[c.leader.index as usize] += 1;
    }
    println!("user balance  seat share  leader share");
    for (u, b) in &balances {
        let i = u.index as usize;
        println!(
            "{:>4} {:>7}  {:>10.3}  {:>12.3}",
            i,
            b,
            seats[i] as f64 / rounds as f64,
            leads[i] as f64 / rounds as f64
        );
    }
    Ok(())
}
