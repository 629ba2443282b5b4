//! Builds a small DAG by hand, screens bad nodes, finds the tips of the
//! first interval and walks its subtree.
//!
//! cargo run --example dag_ledger

use std::collections::HashSet;

use dagfed::crypto::{Digest, KeyRing};
use dagfed::dag::{export_jsonl, verify_incoming, Dag, NodeDraft, NodeKind, OpenMembership, Payload};

fn update(keys: &KeyRing, who: u32, sources: Vec<Digest>, t: u64) -> dagfed::dag::DagNode {
    let mut d = NodeDraft::bare(keys.key(who).id(), NodeKind::ModelUpdate, sources.clone(), t, Payload::None);
    d.source_evals = vec![0.5; sources.len()];
    d.weight_commit = dagfed::crypto::hash(format!("weights-{who}-{t}").as_bytes());
    d.sign(keys.key(who))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keys = KeyRing::derive(7, 4);
    let mut dag = Dag::new();
    let root = dag.append_node(NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(keys.key(0)))?;

    let a = dag.append_node(update(&keys, 1, vec![root], 2))?;
    let b = dag.append_node(update(&keys, 2, vec![root], 3))?;
    let c = dag.append_node(update(&keys, 3, vec![a, b], 6))?;
    let d = dag.append_node(update(&keys, 1, vec![c], 12))?;
    println!("{} nodes, root {}", dag.len(), root.short());

    // Screening rejects a stale timestamp and a forged signature.
    let stale = update(&keys, 2, vec![c], 5);
    println!("stale source timestamp: {:?}", verify_incoming(&dag, &stale, &OpenMembership));
    let mut forged = update(&keys, 2, vec![d], 13);
    forged.author = keys.key(3).id();
    println!("forged author:          {:?}", verify_incoming(&dag, &forged, &OpenMembership));

    let delta = 10;
    let tips = dag.find_tips(0, delta);
    println!("interval 0 tips: {:?}", tips.iter().map(|t| t.short()).collect::<Vec<_>>());
    let subtree = dag.settle_subtree(0, &tips, &HashSet::new());
    println!(
        "interval 0 subtree: {} members, {} balance-eligible",
        subtree.members.len(),
        subtree.balance_eligible().count()
    );
    for id in [a, b, c] {
        println!("  {} has {} children", id.short(), dag.child_count(&id));
    }

    let mut out = Vec::new();
    export_jsonl(&dag, &mut out)?;
    println!(
        "jsonl export: {} bytes, {} lines",
        out.len(),
        out.iter().filter(|&&b| b == b'\n').count()
    );
    Ok(())
}
