//! Task-DAG lifecycle: publication with an escrowed prize, worker
//! registration, per-node monitoring, and finalization.
//!
//! The publisher commits to the test set at publication and only reveals it
//! (by storing the bytes and naming their URI) in the termination node.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, Digest, KeyRing, Keypair, UserId};
use crate::dag::{Dag, DagError, DagNode, Membership, NodeDraft, NodeKind, Payload, TaskInfo, TerminationInfo};
use crate::dataset::Dataset;
use crate::ledger::{Ledger, LedgerError};
use crate::model::{evaluate, ModelWeights, Network};
use crate::settlement::{elect_committee, registration_escrow_key, task_escrow_key, ElectionError, Penalty};
use crate::store::{uri_for, BlobStore};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("committee election failed: {0}")]
    Committee(#[from] ElectionError),
    #[error("{0} is already registered")]
    AlreadyRegistered(UserId),
    #[error("unknown strategy tag {0:?}")]
    UnknownStrategy(String),
    #[error("revealed test set does not match the committed digest")]
    CommitmentMismatch,
    #[error("node {0} is not a verified winner")]
    NotAWinner(Digest),
    #[error("task {0} is already finalized")]
    Finalized(u64),
    #[error("target accuracy {0} outside (0, 1]")]
    BadTarget(f64),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
}

/// What a publisher asks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u64,
    pub target_accuracy: f64,
    pub prize: u64,
    pub contest: String,
    pub penalty: String,
    pub committee_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: u64,
    pub publisher: UserId,
    pub genesis: Digest,
    pub initial_commit: Digest,
    pub initial_uri: String,
    pub test_commit: Digest,
    pub target_accuracy: f64,
    pub prize: u64,
    pub contest: String,
    pub penalty: String,
    pub committee: Vec<UserId>,
    pub genesis_timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrizeAllocation {
    pub shares: BTreeMap<UserId, u64>,
    pub winner: Option<Digest>,
}

impl PrizeAllocation {
    pub fn total(&self) -> u64 {
        self.shares.values().sum()
    }

    fn add(&mut self, user: UserId, amount: u64) {
        if amount > 0 {
            *self.shares.entry(user).or_insert(0) += amount;
        }
    }
}

/// Context handed to a contest strategy.
pub struct ContestContext<'a> {
    pub dag: &'a Dag,
    pub winner: &'a Digest,
    pub prize: u64,
    pub reward_per_reference: u64,
}

pub trait ContestStrategy {
    fn allocate(&self, ctx: &ContestContext) -> PrizeAllocation;
}

pub trait PenaltyStrategy {
    fn fine(&self, dag: &Dag, node: &DagNode) -> u64;
}

/// Equal share for every model node reachable backwards from the winner,
/// roots excluded. The indivisible remainder stays with the publisher.
pub struct WinnerTraverse;

impl ContestStrategy for WinnerTraverse {
    fn allocate(&self, ctx: &ContestContext) -> PrizeAllocation {
        let path = ancestors_with(ctx.dag, ctx.winner);
        let mut out = PrizeAllocation {
            winner: Some(*ctx.winner),
            ..PrizeAllocation::default()
        };
        if path.is_empty() {
            return out;
        }
        let share = ctx.prize / path.len() as u64;
        for id in &path {
            out.add(ctx.dag.get(id).expect("ancestor in dag").author, share);
        }
        out
    }
}

/// The winner plus every model-update ancestor.
pub fn ancestors_with(dag: &Dag, winner: &Digest) -> Vec<Digest> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![*winner];
    while let Some(id) = stack.pop() {
        let Some(n) = dag.get(&id) else { continue };
        if n.kind != NodeKind::ModelUpdate || !seen.insert(id) {
            continue;
        }
        stack.extend(n.sources.iter().copied());
    }
    let mut out: Vec<Digest> = seen.into_iter().collect();
    out.sort_by_key(|d| dag.position(d));
    out
}

/// A fixed amount per cross-author model reference, paid to the referred
/// node's author in DAG order until the prize runs out.
pub struct ImmediateSettlement;

impl ContestStrategy for ImmediateSettlement {
    fn allocate(&self, ctx: &ContestContext) -> PrizeAllocation {
        let mut out = PrizeAllocation {
            winner: Some(*ctx.winner),
            ..PrizeAllocation::default()
        };
        let mut left = ctx.prize;
        for n in ctx.dag.iter().filter(|n| n.kind == NodeKind::ModelUpdate) {
            for s in &n.sources {
                let Some(src) = ctx.dag.get(s) else { continue };
                if src.kind == NodeKind::ModelUpdate && src.author != n.author {
                    let pay = ctx.reward_per_reference.min(left);
                    out.add(src.author, pay);
                    left -= pay;
                }
            }
        }
        out
    }
}

/// Fine for self-citation: `base * max(0, ratio - threshold)` where ratio is
/// the share of sources by the node's own author. Rounded down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfReference {
    pub threshold: f64,
    pub base_fine: u64,
}

impl Default for SelfReference {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            base_fine: 10,
        }
    }
}

impl SelfReference {
    pub fn ratio(dag: &Dag, node: &DagNode) -> f64 {
        if node.sources.is_empty() {
            return 0.0;
        }
        let own = node
            .sources
            .iter()
            .filter(|s| dag.get(s).is_some_and(|n| n.author == node.author))
            .count();
        own as f64 / node.sources.len() as f64
    }
}

impl PenaltyStrategy for SelfReference {
    fn fine(&self, dag: &Dag, node: &DagNode) -> u64 {
        let excess = Self::ratio(dag, node) - self.threshold;
        if excess <= 0.0 {
            return 0;
        }
        (self.base_fine as f64 * excess + 1e-9).floor() as u64
    }
}

pub struct NoPenalty;

impl PenaltyStrategy for NoPenalty {
    fn fine(&self, _: &Dag, _: &DagNode) -> u64 {
        0
    }
}

/// Strategy tags resolved at run time.
pub struct StrategyRegistry {
    contests: HashMap<String, Box<dyn ContestStrategy>>,
    penalties: HashMap<String, Box<dyn PenaltyStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtins(SelfReference::default())
    }
}

impl StrategyRegistry {
    pub fn with_builtins(self_reference: SelfReference) -> Self {
        let mut r = Self {
            contests: HashMap::new(),
            penalties: HashMap::new(),
        };
        r.add_contest("winner-traverse", WinnerTraverse);
        r.add_contest("immediate-settlement", ImmediateSettlement);
        r.add_penalty("self-reference", self_reference);
        r.add_penalty("none", NoPenalty);
        r
    }

    pub fn add_contest(&mut self, tag: &str, s: impl ContestStrategy + 'static) {
        self.contests.insert(tag.to_string(), Box::new(s));
    }

    pub fn add_penalty(&mut self, tag: &str, s: impl PenaltyStrategy + 'static) {
        self.penalties.insert(tag.to_string(), Box::new(s));
    }

    pub fn contest(&self, tag: &str) -> Result<&dyn ContestStrategy, TaskError> {
        self.contests
            .get(tag)
            .map(|b| b.as_ref())
            .ok_or_else(|| TaskError::UnknownStrategy(tag.to_string()))
    }

    pub fn penalty(&self, tag: &str) -> Result<&dyn PenaltyStrategy, TaskError> {
        self.penalties
            .get(tag)
            .map(|b| b.as_ref())
            .ok_or_else(|| TaskError::UnknownStrategy(tag.to_string()))
    }
}

pub fn apply_contest_strategy(registry: &StrategyRegistry, tag: &str, ctx: &ContestContext) -> Result<PrizeAllocation, TaskError> {
    Ok(registry.contest(tag)?.allocate(ctx))
}

pub fn apply_penalty_strategy(registry: &StrategyRegistry, tag: &str, dag: &Dag, node: &DagNode) -> Result<u64, TaskError> {
    Ok(registry.penalty(tag)?.fine(dag, node))
}

/// A running task.
#[derive(Debug, Clone)]
pub struct Task {
    pub descriptor: TaskDescriptor,
    registered: BTreeMap<UserId, u64>,
    pub termination: Option<Digest>,
}

impl Task {
    pub fn is_registered(&self, user: &UserId) -> bool {
        self.registered.contains_key(user)
    }

    pub fn registrations(&self) -> impl Iterator<Item = (&UserId, &u64)> {
        self.registered.iter()
    }

    pub fn is_finalized(&self) -> bool {
        self.termination.is_some()
    }
}

impl Membership for Task {
    fn is_registered(&self, user: &UserId) -> bool {
        *user == self.descriptor.publisher || self.registered.contains_key(user)
    }
    fn is_solvent(&self, _: &UserId) -> bool {
        true
    }
}

/// Escrows the prize, elects the task committee, stores the initial
/// weights, and appends the task-genesis node to an empty `dag`. Only the
/// test set's digest leaves this call.
#[allow(clippy::too_many_arguments)]
pub fn publish_task<S: BlobStore>(
    publisher: &Keypair,
    keys: &KeyRing,
    ledger: &mut Ledger,
    dag: &mut Dag,
    store: &mut S,
    initial: &ModelWeights,
    test_set: &Dataset,
    spec: &TaskSpec,
    tick: u64,
) -> Result<Task, TaskError> {
    if !(spec.target_accuracy > 0.0 && spec.target_accuracy <= 1.0) {
        return Err(TaskError::BadTarget(spec.target_accuracy));
    }
    let me = publisher.id();
    let have = ledger.balance(&me);
    if have < spec.prize {
        return Err(LedgerError::InsufficientBalance {
            user: me,
            have,
            need: spec.prize,
        }
        .into());
    }
    let seed = hash_parts([b"dagfed/task".as_slice(), &spec.task_id.to_le_bytes(), &me.public_key]);
    let committee = elect_committee(keys, ledger, &seed, spec.committee_size)?;
    let test_commit = hash(&test_set.to_bytes());
    let initial_commit = store.put(&initial.to_bytes())?;
    let initial_uri = uri_for(&initial_commit);
    let info = TaskInfo {
        task_id: spec.task_id,
        test_commit,
        target_accuracy: spec.target_accuracy,
        prize: spec.prize,
        contest: spec.contest.clone(),
        penalty: spec.penalty.clone(),
        committee: committee.members.clone(),
    };
    let mut draft = NodeDraft::bare(me, NodeKind::TaskGenesis, vec![], tick, Payload::Task(info));
    draft.weight_commit = initial_commit;
    draft.weight_uri = initial_uri.clone();
    let node = draft.sign(publisher);
    dag.check_append(&node)?;
    ledger.open_escrow(task_escrow_key(spec.task_id), &me, spec.prize)?;
    let genesis = dag.append_node(node)?;
    Ok(Task {
        descriptor: TaskDescriptor {
            task_id: spec.task_id,
            publisher: me,
            genesis,
            initial_commit,
            initial_uri,
            test_commit,
            target_accuracy: spec.target_accuracy,
            prize: spec.prize,
            contest: spec.contest.clone(),
            penalty: spec.penalty.clone(),
            committee: committee.members,
            genesis_timestamp: tick,
        },
        registered: BTreeMap::new(),
        termination: None,
    })
}

/// Escrows the registration deposit.
pub fn register_worker(task: &mut Task, ledger: &mut Ledger, user: &UserId, deposit: u64) -> Result<(), TaskError> {
    if task.registered.contains_key(user) {
        return Err(TaskError::AlreadyRegistered(*user));
    }
    ledger.open_escrow(registration_escrow_key(task.descriptor.task_id, user), user, deposit)?;
    task.registered.insert(*user, deposit);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorReport {
    pub penalty: Option<Penalty>,
    /// Publisher re-evaluation when it beat the target.
    pub winner_accuracy: Option<f64>,
    /// Self-eval claimed above target but weights could not be loaded.
    pub verification_failed: bool,
    pub reevaluated: Option<f64>,
}

impl MonitorReport {
    pub fn is_continue(&self) -> bool {
        self.penalty.is_none() && self.winner_accuracy.is_none() && !self.verification_failed
    }
}

/// Checks one accepted node: penalty strategy, then (only when the claimed
/// accuracy beats the target) a re-evaluation on the publisher's test set.
pub fn monitor_step<S: BlobStore>(
    task: &Task,
    registry: &StrategyRegistry,
    dag: &Dag,
    store: &S,
    net: &Network,
    test_set: &Dataset,
    node: &DagNode,
) -> Result<MonitorReport, TaskError> {
    let mut out = MonitorReport::default();
    if node.kind != NodeKind::ModelUpdate {
        return Ok(out);
    }
    let fine = apply_penalty_strategy(registry, &task.descriptor.penalty, dag, node)?;
    if fine > 0 {
        let escrow = task
            .is_registered(&node.author)
            .then(|| registration_escrow_key(task.descriptor.task_id, &node.author));
        out.penalty = Some(Penalty {
            user: node.author,
            amount: fine,
            node: node.id,
            escrow,
        });
    }
    if node.self_eval > task.descriptor.target_accuracy {
        let weights = store
            .get(&node.weight_commit)
            .ok()
            .flatten()
            .and_then(|b| ModelWeights::from_bytes(&b).ok())
            .filter(|w| net.check_weights(w).is_ok());
        match weights {
            None => out.verification_failed = true,
            Some(w) => {
                let acc = evaluate(net, &w, test_set);
                out.reevaluated = Some(acc);
                if acc > task.descriptor.target_accuracy {
                    out.winner_accuracy = Some(acc);
                }
            }
        }
    }
    Ok(out)
}

/// Reveals the test set, allocates the prize and appends the termination
/// node. Balances move when a settlement collects the node.
#[allow(clippy::too_many_arguments)]
pub fn finalize_task<S: BlobStore>(
    task: &mut Task,
    registry: &StrategyRegistry,
    dag: &mut Dag,
    store: &mut S,
    publisher: &Keypair,
    revealed: &Dataset,
    winner: &Digest,
    reevaluated: f64,
    reward_per_reference: u64,
    tick: u64,
) -> Result<(Digest, PrizeAllocation), TaskError> {
    let d = &task.descriptor;
    if task.termination.is_some() {
        return Err(TaskError::Finalized(d.task_id));
    }
    if reevaluated <= d.target_accuracy || dag.get(winner).is_none_or(|n| n.kind != NodeKind::ModelUpdate) {
        return Err(TaskError::NotAWinner(*winner));
    }
    let bytes = revealed.to_bytes();
    if hash(&bytes) != d.test_commit {
        return Err(TaskError::CommitmentMismatch);
    }
    let ctx = ContestContext {
        dag,
        winner,
        prize: d.prize,
        reward_per_reference,
    };
    let allocation = apply_contest_strategy(registry, &d.contest, &ctx)?;
    let test_uri = uri_for(&store.put(&bytes)?);
    let info = TerminationInfo {
        task_id: d.task_id,
        winner: *winner,
        winner_author: dag.get(winner).expect("checked").author,
        test_uri,
        reevaluated,
        allocation: allocation.shares.iter().map(|(u, a)| (*u, *a)).collect(),
    };
    let node = NodeDraft::bare(
        d.publisher,
        NodeKind::TaskTermination,
        vec![*winner],
        tick,
        Payload::Termination(info),
    )
    .sign(publisher);
    let id = dag.append_node(node)?;
    task.termination = Some(id);
    Ok((id, allocation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::store::MemoryStore;

    struct Fixture {
        keys: KeyRing,
        ledger: Ledger,
        dag: Dag,
        store: MemoryStore,
        net: Network,
        test: Dataset,
    }

    fn fixture(balance: u64) -> Fixture {
        let keys = KeyRing::derive(5, 10);
        let mut ledger = Ledger::new();
        for u in keys.ids() {
            ledger.fund(u, balance);
        }
        let data = crate::dataset::blobs(&crate::dataset::BlobSpec::default(), 1);
        let test = data.subset(&(0..50).collect::<Vec<_>>());
        let net = Network::new(&Architecture::mlp(data.dim(), &[], data.classes() as usize)).unwrap();
        Fixture {
            keys,
            ledger,
            dag: Dag::new(),
            store: MemoryStore::new(),
            net,
            test,
        }
    }

    fn spec(prize: u64) -> TaskSpec {
        TaskSpec {
            task_id: 1,
            target_accuracy: 0.9,
            prize,
            contest: "winner-traverse".into(),
            penalty: "self-reference".into(),
            committee_size: 3,
        }
    }

    fn publish(f: &mut Fixture, prize: u64) -> Result<Task, TaskError> {
        let w = f.net.zero_weights();
        publish_task(
            f.keys.key(0),
            &f.keys,
            &mut f.ledger,
            &mut f.dag,
            &mut f.store,
            &w,
            &f.test,
            &spec(prize),
            0,
        )
    }

    fn update(dag: &mut Dag, key: &Keypair, sources: &[Digest], t: u64) -> Digest {
        let mut d = NodeDraft::bare(key.id(), NodeKind::ModelUpdate, sources.to_vec(), t, Payload::None);
        d.source_evals = vec![0.5; sources.len()];
        dag.append_node(d.sign(key)).unwrap()
    }

    #[test]
    fn test_publish_escrows_prize() {
        let mut f = fixture(100);
        let task = publish(&mut f, 100).unwrap();
        assert_eq!(f.ledger.balance(&f.keys.key(0).id()), 0);
        assert_eq!(f.ledger.escrow_amount("task/1"), Some(100));
        assert_eq!(task.descriptor.committee.len(), 3);
        assert_eq!(f.dag.root().unwrap().id, task.descriptor.genesis);
        assert!(!f.store.contains(&task.descriptor.test_commit));
        let mut g = fixture(99);
        assert!(matches!(
            publish(&mut g, 100),
            Err(TaskError::Ledger(LedgerError::InsufficientBalance { .. }))
        ));
    }

    #[test]
    fn test_committee_is_reproducible() {
        let mut a = fixture(100);
        let mut b = fixture(100);
        assert_eq!(
            publish(&mut a, 50).unwrap().descriptor.committee,
            publish(&mut b, 50).unwrap().descriptor.committee
        );
    }

    #[test]
    fn test_registration() {
        let mut f = fixture(100);
        let mut task = publish(&mut f, 10).unwrap();
        let u = f.keys.key(3).id();
        register_worker(&mut task, &mut f.ledger, &u, 5).unwrap();
        assert!(matches!(
            register_worker(&mut task, &mut f.ledger, &u, 5),
            Err(TaskError::AlreadyRegistered(_))
        ));
        assert_eq!(f.ledger.balance(&u), 95);
        let stranger = f.keys.key(4);
        let mut d = NodeDraft::bare(
            stranger.id(),
            NodeKind::ModelUpdate,
            vec![task.descriptor.genesis],
            1,
            Payload::None,
        );
        d.source_evals = vec![0.5];
        let node = d.sign(stranger);
        assert_eq!(
            crate::dag::verify_incoming(&f.dag, &node, &task),
            crate::dag::Admission::Reject(crate::dag::Rejection::NotRegistered)
        );
    }

    #[test]
    fn test_winner_traverse_chain() {
        let mut f = fixture(100);
        let task = publish(&mut f, 90).unwrap();
        let g = task.descriptor.genesis;
        let a = update(&mut f.dag, f.keys.key(1), &[g], 1);
        let b = update(&mut f.dag, f.keys.key(2), &[a], 2);
        let w = update(&mut f.dag, f.keys.key(3), &[b], 3);
        let ctx = ContestContext {
            dag: &f.dag,
            winner: &w,
            prize: 90,
            reward_per_reference: 1,
        };
        let alloc = WinnerTraverse.allocate(&ctx);
        assert_eq!(alloc.shares.values().copied().collect::<Vec<_>>(), vec![30, 30, 30]);
        let alone = update(&mut f.dag, f.keys.key(4), &[g], 4);
        let ctx = ContestContext {
            dag: &f.dag,
            winner: &alone,
            prize: 90,
            reward_per_reference: 1,
        };
        let alloc = WinnerTraverse.allocate(&ctx);
        assert_eq!(alloc.shares[&f.keys.key(4).id()], 90);
    }

    #[test]
    fn test_egalitarian_four_users() {
        let mut f = fixture(100);
        let task = publish(&mut f, 100).unwrap();
        let mut prev = task.descriptor.genesis;
        for i in 1..=4 {
            prev = update(&mut f.dag, f.keys.key(i), &[prev], i as u64);
        }
        let ctx = ContestContext {
            dag: &f.dag,
            winner: &prev,
            prize: 100,
            reward_per_reference: 1,
        };
        let alloc = WinnerTraverse.allocate(&ctx);
        assert!(alloc.shares.values().all(|&v| v == 25));
        assert_eq!(alloc.total(), 100);
    }

    #[test]
    fn test_immediate_settlement_counts_references() {
        let mut f = fixture(100);
        let task = publish(&mut f, 100).unwrap();
        let g = task.descriptor.genesis;
        let a = update(&mut f.dag, f.keys.key(1), &[g], 1);
        for i in 2..5 {
            update(&mut f.dag, f.keys.key(i), &[a], i as u64);
        }
        let ctx = ContestContext {
            dag: &f.dag,
            winner: &a,
            prize: 100,
            reward_per_reference: 7,
        };
        assert_eq!(ImmediateSettlement.allocate(&ctx).shares[&f.keys.key(1).id()], 21);
    }

    #[test]
    fn test_self_reference_fine() {
        let mut f = fixture(100);
        let task = publish(&mut f, 10).unwrap();
        let k = f.keys.key(1);
        let mut own = Vec::new();
        for t in 1..=5 {
            own.push(update(&mut f.dag, k, &[task.descriptor.genesis], t));
        }
        let n = update(&mut f.dag, k, &own, 6);
        let rule = SelfReference {
            threshold: 0.5,
            base_fine: 10,
        };
        assert_eq!(rule.fine(&f.dag, f.dag.get(&n).unwrap()), 5);
        let other = update(&mut f.dag, f.keys.key(2), &[own[0], own[1]], 7);
        let half = update(&mut f.dag, k, &[own[0], other], 8);
        assert_eq!(rule.fine(&f.dag, f.dag.get(&half).unwrap()), 0);
        assert_eq!(rule.fine(&f.dag, f.dag.get(&other).unwrap()), 0);
        assert!(matches!(
            StrategyRegistry::default().penalty("h-index"),
            Err(TaskError::UnknownStrategy(_))
        ));
    }

    #[test]
    fn test_monitor_rejects_inflated_claim_and_finalize_checks_reveal() {
        let mut f = fixture(100);
        let mut task = publish(&mut f, 60).unwrap();
        let reg = StrategyRegistry::default();
        let k = f.keys.key(1);
        let w = f.net.zero_weights();
        let commit = f.store.put(&w.to_bytes()).unwrap();
        let mut d = NodeDraft::bare(k.id(), NodeKind::ModelUpdate, vec![task.descriptor.genesis], 1, Payload::None);
        d.source_evals = vec![0.5];
        d.self_eval = 0.99;
        d.weight_commit = commit;
        d.weight_uri = uri_for(&commit);
        let node = d.sign(k);
        f.dag.append_node(node.clone()).unwrap();
        let r = monitor_step(&task, &reg, &f.dag, &f.store, &f.net, &f.test, &node).unwrap();
        assert!(r.winner_accuracy.is_none());
        assert!(r.reevaluated.unwrap() < 0.9);
        assert!(r.is_continue());
        assert!(finalize_task(
            &mut task,
            &reg,
            &mut f.dag,
            &mut f.store,
            f.keys.key(0),
            &f.test,
            &node.id,
            0.95,
            1,
            2
        )
        .is_ok());
        let mut tampered = f.test.clone();
        tampered.set_label(0, (tampered.label(0) + 1) % 10);
        task.termination = None;
        assert!(matches!(
            finalize_task(
                &mut task,
                &reg,
                &mut f.dag,
                &mut f.store,
                f.keys.key(0),
                &tampered,
                &node.id,
                0.95,
                1,
                3
            ),
            Err(TaskError::CommitmentMismatch)
        ));
    }
}
