//! Random small settlement histories and a whole-history oracle, shared by
//! the settlement property test and the acceptance suite.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use dagfed::crypto::{hash, Digest, KeyRing, UserId};
use dagfed::dag::{Dag, NodeDraft, NodeKind, Payload};
use dagfed::dataset::{blobs, BlobSpec, Dataset};
use dagfed::ledger::Ledger;
use dagfed::pol::{raise_challenge, respond, PolBook, PolParams};
use dagfed::settlement::{audit_chain, Faults, SettlementConfig, Settler};
use dagfed::store::MemoryStore;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

const USERS: u32 = 6;
const DELTA: u64 = 5;
const DEPOSIT: u64 = 10;
const INITIAL: u64 = 1000;

#[derive(Debug, Clone)]
pub struct Step {
    author: u32,
    gap: u64,
    picks: Vec<usize>,
    /// (challenger offset, bad, prover answers)
    challenge: Option<(u32, bool, bool)>,
}

pub fn step() -> impl Strategy<Value = Step> {
    (
        0..USERS,
        0u64..4,
        prop::collection::vec(0usize..64, 1..4),
        prop::option::weighted(0.3, (1..USERS, any::<bool>(), any::<bool>())),
    )
        .prop_map(|(author, gap, picks, challenge)| Step {
            author,
            gap,
            picks,
            challenge,
        })
}

enum Action {
    Publish(usize),
    Challenge(usize),
    Respond(usize),
}

struct Run {
    keys: KeyRing,
    dag: Dag,
    settler: Settler,
    book: PolBook,
    store: MemoryStore,
    data: Dataset,
    /// Node index to id, for published model updates.
    ids: Vec<Option<Digest>>,
    challenges: Vec<Option<Digest>>,
    bad: HashSet<Digest>,
}

impl Run {
    fn settle_through(&mut self, tick: u64) {
        while (self.settler.state.next_interval + 1) * DELTA <= tick {
            let at = (self.settler.state.next_interval + 1) * DELTA;
            let bad = &self.bad;
            let replay = |_: &Dag, c: &dagfed::pol::PolChallenge, _: &UserId| Ok(if bad.contains(&c.target) { 1e9 } else { 0.0 });
            self.settler
                .settle(at, &mut self.dag, &self.keys, &mut self.book, replay, &[], &Faults::default())
                .expect("honest settlement succeeds");
        }
    }
}

fn execute(steps: &[Step]) -> Run {
    let keys = KeyRing::derive(21, USERS);
    let mut ledger = Ledger::new();
    for u in keys.ids() {
        ledger.fund(u, INITIAL);
    }
    let mut dag = Dag::new();
    dag.append_node(NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(keys.key(0)))
        .unwrap();
    let cfg = SettlementConfig {
        delta: DELTA,
        committee_size: 4,
        reward_per_reference: 1,
        max_rounds: 3,
        pol: PolParams {
            deposit: DEPOSIT,
            refund_fraction: 0.5,
            timeout_intervals: 1,
            noise_std: 0.0,
            epsilon: 0.5,
        },
    };
    let mut run = Run {
        keys,
        dag,
        settler: Settler::new(cfg, ledger),
        book: PolBook::new(),
        store: MemoryStore::new(),
        data: blobs(
            &BlobSpec {
                samples: 10,
                classes: 2,
                side: 2,
                spread: 0.1,
            },
            1,
        ),
        ids: vec![None; steps.len()],
        challenges: vec![None; steps.len()],
        bad: HashSet::new(),
    };

    let mut t = 0;
    let mut plan: Vec<(u64, usize, Action)> = Vec::new();
    for (i, s) in steps.iter().enumerate() {
        t += s.gap + 1;
        plan.push((t, 3 * i, Action::Publish(i)));
        if let Some((_, _, answers)) = s.challenge {
            plan.push((t + 1, 3 * i + 1, Action::Challenge(i)));
            if answers {
                plan.push((t + 2, 3 * i + 2, Action::Respond(i)));
            }
        }
    }
    plan.sort_by_key(|(t, k, _)| (*t, *k));

    for (tick, _, action) in plan {
        run.settle_through(tick);
        match action {
            Action::Publish(i) => {
                let s = &steps[i];
                let pool: Vec<Digest> = run
                    .dag
                    .iter()
                    .filter(|n| n.kind.carries_model() && n.timestamp < tick)
                    .map(|n| n.id)
                    .collect();
                let sources: Vec<Digest> = s
                    .picks
                    .iter()
                    .map(|p| pool[p % pool.len()])
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let key = run.keys.key(s.author);
                let mut d = NodeDraft::bare(key.id(), NodeKind::ModelUpdate, sources.clone(), tick, Payload::None);
                d.source_evals = vec![0.5; sources.len()];
                d.weight_commit = hash(&(i as u64).to_le_bytes());
                run.ids[i] = Some(run.dag.append_node(d.sign(key)).unwrap());
            }
            Action::Challenge(i) => {
                let (off, bad, answers) = steps[i].challenge.unwrap();
                let target = run.ids[i].unwrap();
                let challenger = run.keys.key((steps[i].author + off) % USERS);
                let c = raise_challenge(
                    &mut run.book,
                    &mut run.dag,
                    run.settler.ledger_mut(),
                    challenger,
                    &target,
                    DEPOSIT,
                    tick,
                )
                .unwrap();
                run.challenges[i] = Some(c);
                // Silence ends in a timeout, which invalidates too.
                if bad || !answers {
                    run.bad.insert(target);
                }
            }
            Action::Respond(i) => {
                let c = run.challenges[i].unwrap();
                let prover = run.keys.key(steps[i].author);
                respond(&mut run.book, &mut run.dag, &mut run.store, prover, &c, &run.data, 0.0, 0, tick).unwrap();
            }
        }
    }
    // Drain: every challenge reaches a verdict, then one more interval.
    while run.book.open_count() > 0 {
        let next = (run.settler.state.next_interval + 1) * DELTA;
        run.settle_through(next);
    }
    let next = (run.settler.state.next_interval + 1) * DELTA;
    run.settle_through(next);
    run
}

/// Whole-history recomputation of balances and live reward totals.
fn oracle(run: &Run) -> (BTreeMap<UserId, u64>, BTreeMap<UserId, u64>) {
    let end = run.settler.state.next_interval * DELTA;
    let dag = &run.dag;
    // The script decides which challenges fail; recorded verdicts are not consulted.
    let invalid = &run.bad;
    let counted = |id: &Digest| dag.children(id).any(|c| c.kind != NodeKind::Settlement && c.timestamp < end);
    let mut rewards: BTreeMap<UserId, u64> = BTreeMap::new();
    for n in dag.iter().filter(|n| n.kind == NodeKind::ModelUpdate && n.timestamp < end) {
        if !counted(&n.id) || invalid.contains(&n.id) {
            continue;
        }
        for s in &n.sources {
            let src = dag.get(s).unwrap();
            if src.kind == NodeKind::ModelUpdate && src.author != n.author && !invalid.contains(s) {
                *rewards.entry(src.author).or_insert(0) += 1;
            }
        }
    }
    let mut bal: BTreeMap<UserId, i64> = run.keys.ids().map(|u| (u, INITIAL as i64)).collect();
    for (u, r) in &rewards {
        *bal.get_mut(u).unwrap() += *r as i64;
    }
    for c in run.book.iter() {
        *bal.get_mut(&c.challenger).unwrap() -= DEPOSIT as i64;
        if invalid.contains(&c.target) {
            *bal.get_mut(&c.challenger).unwrap() += 2 * DEPOSIT as i64;
            *bal.get_mut(&c.target_author).unwrap() -= DEPOSIT as i64;
        } else {
            *bal.get_mut(&c.challenger).unwrap() += DEPOSIT as i64 / 2;
        }
    }
    (bal.into_iter().map(|(u, b)| (u, b as u64)).collect(), rewards)
}

pub fn histories() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(step(), 1..24)
}

/// Runs one history and compares everything against the oracle.
pub fn check(steps: &[Step]) -> Result<(), TestCaseError> {
    let run = execute(steps);
    let ledger = run.settler.ledger();
    let (balances, rewards) = oracle(&run);

    for (u, b) in &balances {
        prop_assert_eq!(ledger.balance(u), *b, "balance of user {}", u.index);
    }
    prop_assert_eq!(run.settler.reward_totals(), rewards);

    // Verdicts follow the script exactly.
    for c in run.book.iter() {
        prop_assert_eq!(c.verdict.as_ref().unwrap().invalidated(), run.bad.contains(&c.target));
    }

    prop_assert!(ledger.conservation_holds());
    prop_assert!(run.settler.chain.iter().all(|r| r.conserves()));
    prop_assert_eq!(audit_chain(&run.settler.chain), Ok(()));

    // Subtrees are disjoint and cover every settled non-settlement node.
    let end = run.settler.state.next_interval * DELTA;
    let mut seen = HashSet::new();
    for r in &run.settler.chain {
        for m in &r.subtree.members {
            prop_assert!(seen.insert(*m), "node settled twice");
        }
    }
    let expected: HashSet<Digest> = run
        .dag
        .iter()
        .filter(|n| !n.kind.is_root() && n.kind != NodeKind::Settlement && n.timestamp < end)
        .map(|n| n.id)
        .collect();
    prop_assert_eq!(seen, expected);
    Ok(())
}
