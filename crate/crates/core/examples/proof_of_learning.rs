//! Calibrates the replay threshold, then challenges three nodes: one honest,
//! one whose training seed was misreported, and one stolen copy whose thief
//! answers with its own data.
//!
//! cargo run --release --example proof_of_learning

use std::collections::HashMap;

use dagfed::crypto::{Digest, KeyRing, UserId};
use dagfed::dag::{Dag, NodeDraft, NodeKind, Payload};
use dagfed::dataset::{digits, Dataset};
use dagfed::ledger::Ledger;
use dagfed::model::{train, Architecture, ModelWeights, Network, TrainingSettings};
use dagfed::pol::{calibrate_epsilon, raise_challenge, respond, verify_proof, PolBook, Replayer};
use dagfed::store::{uri_for, BlobStore, MemoryStore};

const NOISE: f64 = 0.0001;

#[allow(clippy::too_many_arguments)]
fn publish(
    dag: &mut Dag,
    store: &mut MemoryStore,
    keys: &KeyRing,
    who: u32,
    source: Digest,
    weights: &ModelWeights,
    claimed: &TrainingSettings,
    t: u64,
) -> Digest {
    let commit = store.put(&weights.to_bytes()).unwrap();
    let mut d = NodeDraft::bare(keys.key(who).id(), NodeKind::ModelUpdate, vec![source], t, Payload::None);
    d.source_evals = vec![1.0];
    d.weight_commit = commit;
    d.weight_uri = uri_for(&commit);
    d.training_settings = claimed.clone();
    dag.append_node(d.sign(keys.key(who))).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let all = digits();
    let shard = |from: usize| -> Dataset { all.subset(&(from..from + 100).collect::<Vec<_>>()) };
    let net = Network::new(&Architecture::tanh_mlp(64, &[64], 10))?;
    let start = net.init_weights(1);
    let rho = TrainingSettings::sgd(2, 0.05, 10, 7);

    let cal = calibrate_epsilon(
        &net,
        &rho,
        std::slice::from_ref(&start),
        &[shard(0), shard(100), shard(200)],
        NOISE,
        30,
        3,
    )?;
    let honest_max = cal.honest.iter().copied().fold(0.0, f64::max);
    let falsified_min = cal.falsified.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "calibration: honest max {honest_max:.5}, falsified min {falsified_min:.5}, epsilon {:.5}",
        cal.epsilon
    );

    let keys = KeyRing::derive(9, 4);
    let mut ledger = Ledger::new();
    for u in keys.ids() {
        ledger.fund(u, 100);
    }
    let mut store = MemoryStore::new();
    let mut dag = Dag::new();
    let gc = store.put(&start.to_bytes())?;
    let mut g = NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None);
    g.weight_commit = gc;
    let root = dag.append_node(g.sign(keys.key(0)))?;

    let honest_w = train(&net, &start, &rho, &shard(0))?;
    let honest = publish(&mut dag, &mut store, &keys, 1, root, &honest_w, &rho, 1);
    // Trained with one seed, claims another.
    let liar_w = train(&net, &start, &rho.with_seed(8), &shard(100))?;
    let liar = publish(&mut dag, &mut store, &keys, 2, root, &liar_w, &rho, 2);
    // The thief republishes the honest weights under its own key.
    let thief = publish(&mut dag, &mut store, &keys, 3, root, &honest_w, &rho, 3);

    let mut book = PolBook::new();
    let committee: Vec<UserId> = keys.ids().collect();
    let mut cache = HashMap::new();
    for (target, author, data) in [(honest, 1, shard(0)), (liar, 2, shard(100)), (thief, 3, shard(300))] {
        let challenger = keys.key((author + 1) % 4);
        let c = raise_challenge(&mut book, &mut dag, &mut ledger, challenger, &target, 10, 10)?;
        book.mark_settled(&c, 20, 40);
        respond(&mut book, &mut dag, &mut store, keys.key(author), &c, &data, NOISE, 5, 21)?;
        let ch = book.get(&c).unwrap().clone();
        let node = dag.get(&target).unwrap().clone();
        let mut r = Replayer {
            net: &net,
            store: &store,
            dag: &dag,
            cache: &mut cache,
        };
        let d = r.distance(&node, ch.proof.as_ref().unwrap());
        let v = verify_proof(&ch, &committee, cal.epsilon, |_| d);
        println!("author {author}: replay distance {:?} -> {:?}", d, v.outcome);
    }

    // No obfuscation: the replay is exact.
    let exact = calibrate_epsilon(&net, &rho, &[start], &[shard(0)], 0.0, 10, 1)?;
    println!("zero-noise honest distances all zero: {}", exact.honest.iter().all(|&d| d == 0.0));
    Ok(())
}
