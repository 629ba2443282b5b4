//! Six workers publish into a global DAG while a committee settles every
//! interval. Prints each settlement and audits the chain at the end.
//!
//! cargo run --release --example settlement_chain

use dagfed::crypto::KeyRing;
use dagfed::dag::{Dag, NodeDraft, NodeKind, Payload};
use dagfed::dataset::{build_non_iid_shards, digits, split_train_test};
use dagfed::ledger::Ledger;
use dagfed::model::{evaluate, Architecture, Network, TrainingSettings};
use dagfed::pol::InvalidationReason;
use dagfed::settlement::{audit_chain, Faults, SettlementConfig, Settler};
use dagfed::store::{uri_for, BlobStore, MemoryStore};
use dagfed::worker::{load_weights, worker_tick, WorkerPolicy, WorkerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 6;
    let (train, test) = split_train_test(&digits(), 0.75, 2)?;
    let train = train.subset(&(0..1344).collect::<Vec<_>>());
    let plan = build_non_iid_shards(&train, n, 2)?;
    let net = Network::new(&Architecture::tanh_mlp(64, &[64], 10))?;

    let keys = KeyRing::derive(4, n as u32 + 1);
    let mut ledger = Ledger::new();
    for u in keys.ids() {
        ledger.fund(u, 50);
    }
    let mut store = MemoryStore::new();
    let mut dag = Dag::new();
    let g = net.init_weights(4);
    let commit = store.put(&g.to_bytes())?;
    let mut d = NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None);
    d.weight_commit = commit;
    d.weight_uri = uri_for(&commit);
    dag.append_node(d.sign(keys.key(0)))?;

    let policy = WorkerPolicy {
        beta: 4,
        sigma: 2,
        eta: 12,
        idle_probability: 0.3,
        ..WorkerPolicy::default()
    };
    let mut workers: Vec<WorkerState> = (0..n)
        .map(|i| {
            let shard = train.subset(&plan.shards[i]);
            WorkerState {
                key: keys.key(i as u32 + 1).clone(),
                policy: policy.clone(),
                test: shard.subset(&(0..40).collect::<Vec<_>>()),
                train: shard,
                settings: TrainingSettings::sgd(1, 0.05, 16, 0),
                published: Vec::new(),
            }
        })
        .collect();

    let cfg = SettlementConfig {
        delta: 5,
        committee_size: 4,
        ..SettlementConfig::default()
    };
    let mut settler = Settler::new(cfg, ledger);
    let mut book = dagfed::pol::PolBook::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Nothing is challenged here, so replay is never asked for.
    let no_replay = |_: &Dag, _: &_, _: &_| Err(InvalidationReason::MissingWeights);

    for tick in 1..=30 {
        for w in workers.iter_mut() {
            worker_tick(w, &mut dag, &mut store, &net, tick, &mut rng)?;
        }
        if tick % 5 == 0 {
            let r = settler.settle(tick, &mut dag, &keys, &mut book, no_replay, &[], &Faults::default())?;
            println!(
                "interval {:>2}: {:>2} members, {:>2} rewards, minted {:>3}, conserves {}",
                r.interval,
                r.subtree.members.len(),
                r.rewards.len(),
                r.minted,
                r.conserves()
            );
        }
    }
    let newest = dag.iter().rev().find(|n| n.kind == NodeKind::ModelUpdate).unwrap();
    let w = load_weights(&store, &newest.weight_commit).unwrap();
    println!("newest model accuracy {:.3}", evaluate(&net, &w, &test));
    for (u, total) in settler.reward_totals() {
        println!("user {} rewards {total} balance {}", u.index, settler.ledger().balance(&u));
    }
    println!("chain audit: {:?}", audit_chain(&settler.chain));
    Ok(())
}
