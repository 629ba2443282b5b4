//! A publisher escrows a prize for a target accuracy, five registered
//! workers train on a task DAG, the publisher re-evaluates claimed winners,
//! and the next settlement pays out along the winner's ancestry.
//!
//! cargo run --release --example task_lifecycle -- 0.8

use dagfed::crypto::KeyRing;
use dagfed::dag::Dag;
use dagfed::dataset::{build_non_iid_shards, digits, split_train_test};
use dagfed::ledger::Ledger;
use dagfed::model::{Architecture, Network, TrainingSettings};
use dagfed::pol::{InvalidationReason, PolBook};
use dagfed::settlement::{Faults, SettlementConfig, Settler};
use dagfed::store::MemoryStore;
use dagfed::task::{finalize_task, monitor_step, publish_task, register_worker, StrategyRegistry, TaskSpec};
use dagfed::worker::{worker_tick, TickOutcome, WorkerPolicy, WorkerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.8);
    let n = 5;
    let (train, test) = split_train_test(&digits(), 0.75, 6)?;
    let train = train.subset(&(0..1340).collect::<Vec<_>>());
    let plan = build_non_iid_shards(&train, n, 6)?;
    let net = Network::new(&Architecture::tanh_mlp(64, &[64], 10))?;
    let keys = KeyRing::derive(6, n as u32 + 1);
    let mut ledger = Ledger::new();
    for u in keys.ids() {
        ledger.fund(u, 200);
    }

    let spec = TaskSpec {
        task_id: 1,
        target_accuracy: target,
        prize: 120,
        contest: "winner-traverse".into(),
        penalty: "self-reference".into(),
        committee_size: 4,
    };
    let mut dag = Dag::new();
    let mut store = MemoryStore::new();
    let publisher = keys.key(0);
    let mut task = publish_task(
        publisher,
        &keys,
        &mut ledger,
        &mut dag,
        &mut store,
        &net.init_weights(6),
        &test,
        &spec,
        0,
    )?;
    println!(
        "task published, committee {:?}",
        task.descriptor.committee.iter().map(|u| u.index).collect::<Vec<_>>()
    );

    let mut workers = Vec::new();
    for i in 0..n {
        let key = keys.key(i as u32 + 1).clone();
        register_worker(&mut task, &mut ledger, &key.id(), 5)?;
        let shard = train.subset(&plan.shards[i]);
        workers.push(WorkerState {
            key,
            policy: WorkerPolicy {
                beta: 3,
                sigma: 2,
                eta: 10,
                idle_probability: 0.2,
                ..WorkerPolicy::default()
            },
            test: train.subset(&plan.uniform_half((i + 1) % n)[..60]),
            train: shard,
            settings: TrainingSettings::sgd(1, 0.05, 16, 0),
            published: Vec::new(),
        });
    }

    let registry = StrategyRegistry::default();
    let cfg = SettlementConfig {
        delta: 5,
        committee_size: 4,
        ..SettlementConfig::default()
    };
    let mut settler = Settler::new(cfg, ledger);
    let mut book = PolBook::new();
    let mut penalties = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let no_replay = |_: &Dag, _: &_, _: &_| Err(InvalidationReason::MissingWeights);
    let mut winner = None;

    for tick in 1..=200u64 {
        if let Some((id, acc)) = winner {
            if !task.is_finalized() {
                let (_, alloc) = finalize_task(&mut task, &registry, &mut dag, &mut store, publisher, &test, &id, acc, 1, tick)?;
                println!(
                    "tick {tick}: finalized, {} of {} tokens allocated to {} users",
                    alloc.total(),
                    spec.prize,
                    alloc.shares.len()
                );
            }
        } else {
            for w in workers.iter_mut() {
                if let TickOutcome::Published(id) = worker_tick(w, &mut dag, &mut store, &net, tick, &mut rng)? {
                    let node = dag.get(&id).unwrap();
                    let report = monitor_step(&task, &registry, &dag, &store, &net, &test, node)?;
                    penalties.extend(report.penalty);
                    if let (Some(acc), None) = (report.winner_accuracy, winner) {
                        println!(
                            "tick {tick}: worker {} claims {:.3}, publisher measures {acc:.3}",
                            w.key.id().index,
                            node.self_eval
                        );
                        winner = Some((id, acc));
                    }
                }
            }
        }
        if tick % 5 == 0 {
            let r = settler.settle(tick, &mut dag, &keys, &mut book, no_replay, &penalties, &Faults::default())?;
            penalties.clear();
            if !r.collected_terminations.is_empty() {
                println!("interval {}: termination collected", r.interval);
                break;
            }
        }
    }
    if winner.is_none() {
        println!("target {target} not reached");
    }
    for u in keys.ids() {
        println!("user {} balance {}", u.index, settler.ledger().balance(&u));
    }
    println!("conservation holds: {}", settler.ledger().conservation_holds());
    Ok(())
}
