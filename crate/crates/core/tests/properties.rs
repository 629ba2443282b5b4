//! Property tests for per-module invariants.

use std::collections::HashSet;

use dagfed::crypto::{hash, Digest, KeyRing};
use dagfed::dag::{verify_incoming, Admission, Dag, NodeDraft, NodeKind, OpenMembership, Payload};
use dagfed::dataset::{blobs, build_non_iid_shards, obfuscate, BlobSpec};
use dagfed::ledger::Ledger;
use dagfed::model::{aggregate, fnorm_distance, train, Architecture, ModelWeights, Network, TrainingSettings};
use dagfed::worker::{select_sources, Candidate};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn weights(len: usize) -> impl Strategy<Value = ModelWeights> {
    prop::collection::vec(-10.0f64..10.0, len).prop_map(ModelWeights::from_flat)
}

proptest! {
    #![proptest_config(cfg(256))]

    #[test]
    fn aggregate_is_convex_and_order_free(
        ws in prop::collection::vec(weights(6), 1..6),
        evals in prop::collection::vec(0.01f64..1.0, 6),
        scale in 0.1f64..10.0,
    ) {
        let pairs: Vec<(&ModelWeights, f64)> = ws.iter().zip(evals.iter().copied()).collect();
        let out = aggregate(&pairs).unwrap();
        let vals: Vec<Vec<f64>> = ws.iter().map(|w| w.values().collect()).collect();
        for (j, v) in out.values().enumerate() {
            let lo = vals.iter().map(|w| w[j]).fold(f64::INFINITY, f64::min);
            let hi = vals.iter().map(|w| w[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
        let mut rev = pairs.clone();
        rev.reverse();
        let scaled: Vec<(&ModelWeights, f64)> = pairs.iter().map(|&(w, e)| (w, e * scale)).collect();
        for other in [aggregate(&rev).unwrap(), aggregate(&scaled).unwrap()] {
            prop_assert!(fnorm_distance(&out, &other).unwrap() < 1e-9);
        }
    }

    #[test]
    fn fnorm_distance_is_a_metric(a in weights(5), b in weights(5), c in weights(5)) {
        let d = |x: &ModelWeights, y: &ModelWeights| fnorm_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn obfuscation_keeps_labels_and_size(seed in any::<u64>(), std in 0.0f64..2.0) {
        let data = blobs(&BlobSpec { samples: 30, classes: 3, side: 2, spread: 0.2 }, seed);
        let noisy = obfuscate(&data, std, seed).unwrap();
        prop_assert_eq!(noisy.len(), data.len());
        prop_assert_eq!(noisy.labels(), data.labels());
    }

    #[test]
    fn shard_plans_are_disjoint_and_exact(shards in 1usize..8, per in 1usize..10, seed in any::<u64>()) {
        let n = shards * per * 2;
        let data = blobs(&BlobSpec { samples: n, classes: 4, side: 2, spread: 0.2 }, seed);
        let plan = build_non_iid_shards(&data, shards, seed).unwrap();
        let mut seen = HashSet::new();
        for s in &plan.shards {
            prop_assert_eq!(s.len(), plan.samples_per_shard);
            for i in s {
                prop_assert!(seen.insert(*i));
            }
        }
        prop_assert_eq!(seen.len(), n);
    }

    #[test]
    fn select_sources_keeps_the_best(evals in prop::collection::vec(0.0f64..1.0, 1..12), sigma in 1usize..8) {
        let cands: Vec<Candidate> = evals.iter().enumerate().map(|(i, &e)| Candidate { node: Digest([i as u8; 32]), eval: e }).collect();
        let (ids, picked) = select_sources(&cands, sigma);
        prop_assert_eq!(ids.len(), sigma.min(evals.len()));
        prop_assert!(picked.windows(2).all(|w| w[0] >= w[1]));
        let floor = picked.last().copied().unwrap();
        let better = evals.iter().filter(|&&e| e > floor).count();
        prop_assert!(better < ids.len());
    }
}

proptest! {
    #![proptest_config(cfg(32))]

    #[test]
    fn training_replays_bit_for_bit(seed in any::<u64>(), epochs in 1u32..3, batch in 1u32..12) {
        let data = blobs(&BlobSpec { samples: 24, classes: 3, side: 3, spread: 0.3 }, seed);
        let net = Network::new(&Architecture::tanh_mlp(9, &[6], 3)).unwrap();
        let start = net.init_weights(seed);
        let rho = TrainingSettings::sgd(epochs, 0.1, batch, seed);
        let a = train(&net, &start, &rho, &data).unwrap();
        let b = train(&net, &start, &rho, &data).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

#[derive(Debug, Clone)]
struct Attempt {
    author: u32,
    time: u64,
    picks: Vec<usize>,
    /// Point one source at a node that does not exist.
    dangling: bool,
}

proptest! {
    #![proptest_config(cfg(256))]

    #[test]
    fn appends_never_create_back_edges(
        attempts in prop::collection::vec(
            (0u32..4, 1u64..40, prop::collection::vec(0usize..50, 0..4), prop::bool::weighted(0.1))
                .prop_map(|(author, time, picks, dangling)| Attempt { author, time, picks, dangling }),
            1..40,
        )
    ) {
        let keys = KeyRing::derive(8, 4);
        let mut dag = Dag::new();
        dag.append_node(NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(keys.key(0))).unwrap();
        for (i, a) in attempts.iter().enumerate() {
            let ids: Vec<Digest> = dag.iter().map(|n| n.id).collect();
            let mut sources: Vec<Digest> = a.picks.iter().map(|p| ids[p % ids.len()]).collect();
            if a.dangling {
                sources.push(hash(b"nowhere"));
            }
            let mut d = NodeDraft::bare(keys.key(a.author).id(), NodeKind::ModelUpdate, sources.clone(), a.time, Payload::None);
            d.source_evals = vec![0.5; sources.len()];
            d.weight_commit = hash(&(i as u64).to_le_bytes());
            let node = d.sign(keys.key(a.author));
            let verdict = verify_incoming(&dag, &node, &OpenMembership);
            let appended = dag.append_node(node).is_ok();
            prop_assert_eq!(verdict == Admission::Accept, appended);
        }
        for n in dag.iter() {
            for s in &n.sources {
                prop_assert!(dag.get(s).unwrap().timestamp < n.timestamp);
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Transfer(u32, u32, u64),
    Escrow(u32, u64),
    Release(u32, u64),
    Burn(u32, u64),
    Mint(u32, u64),
    Revoke(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u32..4, 0u32..4, 0u64..60).prop_map(|(a, b, x)| Op::Transfer(a, b, x)),
        (0u32..4, 0u64..60).prop_map(|(a, x)| Op::Escrow(a, x)),
        (0u32..4, 0u64..60).prop_map(|(a, x)| Op::Release(a, x)),
        (0u32..4, 0u64..60).prop_map(|(a, x)| Op::Burn(a, x)),
        (0u32..4, 1u64..5).prop_map(|(a, x)| Op::Mint(a, x)),
        (0u8..8).prop_map(Op::Revoke),
    ]
}

proptest! {
    #![proptest_config(cfg(256))]

    #[test]
    fn ledger_conserves_under_any_operation_mix(ops in prop::collection::vec(op(), 1..60)) {
        let keys = KeyRing::derive(9, 4);
        let mut l = Ledger::new();
        for u in keys.ids() {
            l.fund(u, 100);
        }
        let id = |i: u32| keys.key(i).id();
        for (step, o) in ops.iter().enumerate() {
            match *o {
                Op::Transfer(a, b, x) => {
                    let _ = l.transfer(&id(a), &id(b), x);
                }
                Op::Escrow(a, x) => {
                    let _ = l.open_escrow(format!("e{a}"), &id(a), x);
                }
                Op::Release(a, x) => {
                    let _ = l.release(&format!("e{a}"), &id((a + 1) % 4), x);
                }
                Op::Burn(a, x) => {
                    l.burn_balance(&id(a), x);
                }
                Op::Mint(a, x) => {
                    let node = Digest([(step % 8) as u8; 32]);
                    l.mint_reward(node, node, id(a), x, 0);
                }
                Op::Revoke(n) => {
                    l.revoke_node(&Digest([n; 32]));
                }
            }
            prop_assert!(l.conservation_holds(), "after {:?}", o);
        }
    }
}
