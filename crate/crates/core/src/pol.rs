//! Proof-of-Learning: deposit-backed challenges, proofs carrying an
//! obfuscated copy of the training data, replay verification by a
//! committee, clearing, and calibration of the distance threshold.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, Keypair, UserId};
use crate::dag::{Dag, DagError, DagNode, NodeDraft, NodeKind, Payload};
use crate::dataset::{obfuscate, Dataset};
use crate::ledger::{Ledger, LedgerError};
use crate::model::{aggregate, fnorm_distance, train, ModelError, ModelWeights, Network, TrainingSettings};
use crate::store::{uri_for, BlobStore};

#[derive(Debug, Error)]
pub enum PolError {
    #[error("node {0} has already been challenged")]
    AlreadyChallenged(Digest),
    #[error("users cannot challenge their own nodes")]
    SelfChallenge,
    #[error("unknown target node {0}")]
    UnknownTarget(Digest),
    #[error("node {0} is not a model update")]
    NotModelNode(Digest),
    #[error("unknown challenge {0}")]
    UnknownChallenge(Digest),
    #[error("only the target's author can answer a challenge")]
    NotAuthor,
    #[error("challenge {0} already has a proof")]
    AlreadyAnswered(Digest),
    #[error("calibration needs at least 10 trials, got {0}")]
    TooFewTrials(usize),
    #[error("honest and falsified distances overlap (honest max {honest_max:.6}, falsified min {falsified_min:.6})")]
    Inseparable {
        honest_max: f64,
        falsified_min: f64,
        honest: Vec<f64>,
        falsified: Vec<f64>,
    },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolParams {
    /// Challenge deposit `pi`.
    pub deposit: u64,
    /// Share of the deposit returned when a challenge fails.
    pub refund_fraction: f64,
    /// Proof deadline in settlement intervals after the challenge settles.
    pub timeout_intervals: u64,
    /// Obfuscation noise standard deviation.
    pub noise_std: f64,
    /// Replay distance threshold.
    pub epsilon: f64,
}

impl Default for PolParams {
    fn default() -> Self {
        Self {
            deposit: 10,
            refund_fraction: 0.5,
            timeout_intervals: 2,
            noise_std: 0.01,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidationReason {
    Timeout,
    LateProof,
    DistanceExceeded,
    CommitmentMismatch,
    UnreachableSources,
    MissingWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "kebab-case")]
pub enum Outcome {
    LearningProved,
    LearningInvalidated(InvalidationReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolProof {
    pub node: Digest,
    pub data_commit: Digest,
    pub data_uri: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolVerdict {
    pub challenge: Digest,
    pub target: Digest,
    /// Per-verifier replay distance; `None` when replay was impossible.
    pub distances: Vec<(UserId, Option<f64>)>,
    pub epsilon: f64,
    pub outcome: Outcome,
}

impl PolVerdict {
    pub fn invalidated(&self) -> bool {
        matches!(self.outcome, Outcome::LearningInvalidated(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolChallenge {
    pub id: Digest,
    pub target: Digest,
    pub target_author: UserId,
    pub challenger: UserId,
    pub deposit: u64,
    pub raised_at: u64,
    /// Set once the challenge node is settled.
    pub deadline: Option<u64>,
    pub proof: Option<PolProof>,
    pub verdict: Option<PolVerdict>,
}

impl PolChallenge {
    pub fn escrow_key(&self) -> String {
        escrow_key(&self.id)
    }

    pub fn is_open(&self) -> bool {
        self.verdict.is_none()
    }
}

fn escrow_key(challenge: &Digest) -> String {
    format!("pol/{}", challenge.to_hex())
}

/// All challenges of one DAG, keyed by challenge node id.
#[derive(Debug, Clone, Default)]
pub struct PolBook {
    challenges: BTreeMap<Digest, PolChallenge>,
    by_target: HashMap<Digest, Digest>,
}

impl PolBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &Digest) -> Option<&PolChallenge> {
        self.challenges.get(id)
    }

    pub fn for_target(&self, target: &Digest) -> Option<&PolChallenge> {
        self.by_target.get(target).and_then(|c| self.challenges.get(c))
    }

    pub fn is_challenged(&self, target: &Digest) -> bool {
        self.by_target.contains_key(target)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolChallenge> {
        self.challenges.values()
    }

    pub fn len(&self) -> usize {
        self.challenges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.challenges.is_empty()
    }

    pub fn open_count(&self) -> usize {
        self.challenges.values().filter(|c| c.is_open()).count()
    }

    /// Starts the proof countdown for a freshly settled challenge.
    pub fn mark_settled(&mut self, id: &Digest, tick: u64, timeout_ticks: u64) {
        if let Some(c) = self.challenges.get_mut(id) {
            if c.deadline.is_none() {
                c.deadline = Some(tick + timeout_ticks);
            }
        }
    }

    pub fn record_verdict(&mut self, verdict: PolVerdict) {
        if let Some(c) = self.challenges.get_mut(&verdict.challenge) {
            c.verdict = Some(verdict);
        }
    }

    /// Challenges a settlement at `tick` must decide: a proof that was
    /// already settled (stamped before `interval_start`), or no proof by
    /// the deadline.
    pub fn due(&self, interval_start: u64, tick: u64) -> Vec<&PolChallenge> {
        self.challenges
            .values()
            .filter(|c| c.is_open())
            .filter(|c| match (&c.proof, c.deadline) {
                (Some(p), _) => p.timestamp < interval_start,
                (None, Some(d)) => d <= tick,
                (None, None) => false,
            })
            .collect()
    }
}

/// Escrows `pi`, appends the challenge node (sourcing the target), and
/// records the challenge.
pub fn raise_challenge(
    book: &mut PolBook,
    dag: &mut Dag,
    ledger: &mut Ledger,
    challenger: &Keypair,
    target: &Digest,
    deposit: u64,
    tick: u64,
) -> Result<Digest, PolError> {
    let node = dag.get(target).ok_or(PolError::UnknownTarget(*target))?;
    if node.kind != NodeKind::ModelUpdate {
        return Err(PolError::NotModelNode(*target));
    }
    if book.is_challenged(target) {
        return Err(PolError::AlreadyChallenged(*target));
    }
    if node.author == challenger.id() {
        return Err(PolError::SelfChallenge);
    }
    let target_author = node.author;
    let have = ledger.balance(&challenger.id());
    if have < deposit {
        return Err(LedgerError::InsufficientBalance {
            user: challenger.id(),
            have,
            need: deposit,
        }
        .into());
    }
    let cnode = NodeDraft::bare(
        challenger.id(),
        NodeKind::PolChallenge,
        vec![*target],
        tick,
        Payload::Challenge { target: *target, deposit },
    )
    .sign(challenger);
    dag.check_append(&cnode)?;
    let id = cnode.id;
    ledger.open_escrow(escrow_key(&id), &challenger.id(), deposit)?;
    dag.append_node(cnode)?;
    book.challenges.insert(
        id,
        PolChallenge {
            id,
            target: *target,
            target_author,
            challenger: challenger.id(),
            deposit,
            raised_at: tick,
            deadline: None,
            proof: None,
            verdict: None,
        },
    );
    book.by_target.insert(*target, id);
    Ok(id)
}

/// The author's answer: obfuscates the retained training data, stores it,
/// and appends a proof node. Late proofs are accepted here and rejected at
/// verification.
#[allow(clippy::too_many_arguments)]
pub fn respond<S: BlobStore>(
    book: &mut PolBook,
    dag: &mut Dag,
    store: &mut S,
    prover: &Keypair,
    challenge: &Digest,
    train_data: &Dataset,
    noise_std: f64,
    seed: u64,
    tick: u64,
) -> Result<Digest, PolError> {
    let c = book.challenges.get(challenge).ok_or(PolError::UnknownChallenge(*challenge))?;
    if c.target_author != prover.id() {
        return Err(PolError::NotAuthor);
    }
    if c.proof.is_some() {
        return Err(PolError::AlreadyAnswered(*challenge));
    }
    let noisy = obfuscate(train_data, noise_std, seed).map_err(|e| std::io::Error::other(e.to_string()))?;
    let data_commit = store.put(&noisy.to_bytes())?;
    let data_uri = uri_for(&data_commit);
    let node = NodeDraft::bare(
        prover.id(),
        NodeKind::PolProof,
        vec![*challenge],
        tick,
        Payload::Proof {
            challenge: *challenge,
            data_commit,
            data_uri: data_uri.clone(),
        },
    )
    .sign(prover);
    let id = dag.append_node(node)?;
    let c = book.challenges.get_mut(challenge).expect("checked above");
    c.proof = Some(PolProof {
        node: id,
        data_commit,
        data_uri,
        timestamp: tick,
    });
    Ok(id)
}

/// Committee vote: each member replays and votes for the author iff the
/// distance is below `epsilon`. Learning is proved with at least 2/3 of
/// the votes.
pub fn verify_proof(
    challenge: &PolChallenge,
    committee: &[UserId],
    epsilon: f64,
    mut replay: impl FnMut(&UserId) -> Result<f64, InvalidationReason>,
) -> PolVerdict {
    let late = match (&challenge.proof, challenge.deadline) {
        (None, _) => Some(InvalidationReason::Timeout),
        (Some(p), Some(d)) if p.timestamp > d => Some(InvalidationReason::LateProof),
        _ => None,
    };
    if let Some(reason) = late {
        return PolVerdict {
            challenge: challenge.id,
            target: challenge.target,
            distances: Vec::new(),
            epsilon,
            outcome: Outcome::LearningInvalidated(reason),
        };
    }
    let mut distances = Vec::with_capacity(committee.len());
    let mut first_error = None;
    let mut support = 0;
    for m in committee {
        match replay(m) {
            Ok(d) => {
                if d < epsilon {
                    support += 1;
                }
                distances.push((*m, Some(d)));
            }
            Err(e) => {
                first_error.get_or_insert(e);
                distances.push((*m, None));
            }
        }
    }
    let quorum = (2 * committee.len()).div_ceil(3);
    let outcome = if support >= quorum && !committee.is_empty() {
        Outcome::LearningProved
    } else {
        Outcome::LearningInvalidated(first_error.unwrap_or(InvalidationReason::DistanceExceeded))
    };
    PolVerdict {
        challenge: challenge.id,
        target: challenge.target,
        distances,
        epsilon,
        outcome,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clearing {
    pub challenger_refund: u64,
    pub burned_deposit: u64,
    pub penalty: u64,
    pub revoked_rewards: u64,
}

/// Applies a final verdict to the ledger.
pub fn clear_challenge(challenge: &PolChallenge, verdict: &PolVerdict, ledger: &mut Ledger, refund_fraction: f64) -> Clearing {
    let key = challenge.escrow_key();
    let held = ledger.escrow_amount(&key).unwrap_or(0);
    let mut out = Clearing::default();
    if verdict.invalidated() {
        ledger.release(&key, &challenge.challenger, held).expect("escrow holds the deposit");
        out.challenger_refund = held;
        out.penalty = ledger.transfer_capped(&challenge.target_author, &challenge.challenger, challenge.deposit);
        out.revoked_rewards = ledger.revoke_node(&challenge.target);
    } else {
        let refund = ((held as f64) * refund_fraction).floor() as u64;
        ledger.release(&key, &challenge.challenger, refund).expect("refund within escrow");
        out.challenger_refund = refund;
        out.burned_deposit = ledger.burn_escrow(&key, held - refund).expect("escrow exists");
    }
    let _ = ledger.close_escrow(&key);
    out
}

/// Replays a node's claimed training from the DAG, the weight store and a
/// proof's obfuscated data. Results are memoized per (node, data) pair,
/// since every honest verifier computes the same value.
pub struct Replayer<'a, S: BlobStore> {
    pub net: &'a Network,
    pub store: &'a S,
    pub dag: &'a Dag,
    pub cache: &'a mut HashMap<(Digest, Digest), Result<f64, InvalidationReason>>,
}

impl<S: BlobStore> Replayer<'_, S> {
    pub fn distance(&mut self, node: &DagNode, proof: &PolProof) -> Result<f64, InvalidationReason> {
        let key = (node.id, proof.data_commit);
        if let Some(r) = self.cache.get(&key) {
            return *r;
        }
        let r = self.compute(node, proof);
        self.cache.insert(key, r);
        r
    }

    fn load_weights(&self, commit: &Digest) -> Option<ModelWeights> {
        let bytes = self.store.get(commit).ok()??;
        ModelWeights::from_bytes(&bytes).ok()
    }

    fn compute(&self, node: &DagNode, proof: &PolProof) -> Result<f64, InvalidationReason> {
        let data = self
            .store
            .get(&proof.data_commit)
            .ok()
            .flatten()
            .filter(|b| crate::crypto::hash(b) == proof.data_commit)
            .and_then(|b| Dataset::from_bytes(&b).ok())
            .ok_or(InvalidationReason::CommitmentMismatch)?;
        let claimed = self.load_weights(&node.weight_commit).ok_or(InvalidationReason::MissingWeights)?;
        let mut sources = Vec::with_capacity(node.sources.len());
        for s in &node.sources {
            let src = self.dag.get(s).ok_or(InvalidationReason::UnreachableSources)?;
            if !src.kind.carries_model() {
                return Err(InvalidationReason::UnreachableSources);
            }
            sources.push(
                self.load_weights(&src.weight_commit)
                    .ok_or(InvalidationReason::UnreachableSources)?,
            );
        }
        let pairs: Vec<(&ModelWeights, f64)> = sources.iter().zip(node.source_evals.iter().copied()).collect();
        let start = aggregate(&pairs).map_err(|_| InvalidationReason::UnreachableSources)?;
        let replayed = train(self.net, &start, &node.training_settings, &data).map_err(|_| InvalidationReason::DistanceExceeded)?;
        replay_distance(&claimed, &replayed, &start).map_err(|_| InvalidationReason::MissingWeights)
    }
}

/// Replay distance relative to the claimed update, `|W - W'| / |W - W0|`.
/// Both honest noise and a falsified seed move the result in proportion to
/// the step size, so one threshold holds from early to late training. An
/// exact replay is 0 even for an empty update; any other mismatch against
/// an empty update is infinite.
pub fn replay_distance(claimed: &ModelWeights, replayed: &ModelWeights, start: &ModelWeights) -> Result<f64, ModelError> {
    let d = fnorm_distance(claimed, replayed)?;
    if d == 0.0 {
        return Ok(0.0);
    }
    let step = fnorm_distance(claimed, start)?;
    Ok(if step == 0.0 { f64::INFINITY } else { d / step })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub epsilon: f64,
    pub noise_std: f64,
    pub honest: Vec<f64>,
    pub falsified: Vec<f64>,
}

/// Runs honest train/replay pairs and falsified-seed pairs, then picks the
/// log-space midpoint between the largest honest and the smallest falsified
/// distance. Trial `t` starts from `starts[t % len]` on `shards[t % len]`.
pub fn calibrate_epsilon(
    net: &Network,
    settings: &TrainingSettings,
    starts: &[ModelWeights],
    shards: &[Dataset],
    noise_std: f64,
    trials: usize,
    seed: u64,
) -> Result<Calibration, PolError> {
    if trials < 10 {
        return Err(PolError::TooFewTrials(trials));
    }
    assert!(!starts.is_empty() && !shards.is_empty(), "calibration needs start points and data");
    let mut honest = Vec::with_capacity(trials);
    let mut falsified = Vec::with_capacity(trials);
    for t in 0..trials {
        let start = &starts[t % starts.len()];
        let data = &shards[t % shards.len()];
        let rho = settings.with_seed(seed.wrapping_add(t as u64));
        let claimed = train(net, start, &rho, data)?;
        let noisy = obfuscate(data, noise_std, seed ^ (0x9e37_79b9 + t as u64)).map_err(|e| std::io::Error::other(e.to_string()))?;
        // A replay that diverges on noisy data counts as infinitely far.
        let replay = train(net, start, &rho, &noisy).ok();
        let forged = train(net, start, &rho.with_seed(!rho.seed), data)?;
        match replay {
            Some(r) => {
                honest.push(replay_distance(&claimed, &r, start)?);
                falsified.push(replay_distance(&forged, &r, start)?);
            }
            None => {
                honest.push(f64::INFINITY);
                falsified.push(f64::INFINITY);
            }
        }
    }
    let honest_max = honest.iter().copied().fold(0.0, f64::max);
    let falsified_min = falsified.iter().copied().fold(f64::INFINITY, f64::min);
    if honest_max >= falsified_min {
        return Err(PolError::Inseparable {
            honest_max,
            falsified_min,
            honest,
            falsified,
        });
    }
    let epsilon = if honest_max == 0.0 {
        falsified_min / 2.0
    } else {
        (honest_max * falsified_min).sqrt()
    };
    Ok(Calibration {
        epsilon,
        noise_std,
        honest,
        falsified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyRing;
    use crate::dataset::digits;
    use crate::model::Architecture;
    use crate::store::MemoryStore;

    struct World {
        keys: KeyRing,
        dag: Dag,
        ledger: Ledger,
        store: MemoryStore,
        book: PolBook,
        net: Network,
        data: Dataset,
        node: Digest,
    }

    /// Genesis plus one honestly trained node by user 1.
    fn world() -> World {
        let keys = KeyRing::derive(5, 3);
        let net = Network::new(&Architecture::default_for(64, 10)).unwrap();
        let data = digits().subset(&(0..40).collect::<Vec<_>>());
        let mut store = MemoryStore::new();
        let mut dag = Dag::new();
        let g_w = net.init_weights(1);
        let g_commit = store.put(&g_w.to_bytes()).unwrap();
        let mut g = NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None);
        g.weight_commit = g_commit;
        let g = dag.append_node(g.sign(keys.key(0))).unwrap();
        let rho = TrainingSettings::sgd(2, 0.1, 10, 77);
        let w = train(&net, &g_w, &rho, &data).unwrap();
        let commit = store.put(&w.to_bytes()).unwrap();
        let mut d = NodeDraft::bare(keys.key(1).id(), NodeKind::ModelUpdate, vec![g], 1, Payload::None);
        d.source_evals = vec![0.1];
        d.weight_commit = commit;
        d.training_settings = rho;
        let node = dag.append_node(d.sign(keys.key(1))).unwrap();
        let mut ledger = Ledger::new();
        for u in keys.ids() {
            ledger.fund(u, 100);
        }
        World {
            keys,
            dag,
            ledger,
            store,
            book: PolBook::new(),
            net,
            data,
            node,
        }
    }

    #[test]
    fn test_challenge_rules() {
        let mut w = world();
        let err = raise_challenge(&mut w.book, &mut w.dag, &mut w.ledger, w.keys.key(1), &w.node, 10, 2);
        assert!(matches!(err, Err(PolError::SelfChallenge)));
        raise_challenge(&mut w.book, &mut w.dag, &mut w.ledger, w.keys.key(2), &w.node, 10, 2).unwrap();
        assert_eq!(w.ledger.balance(&w.keys.key(2).id()), 90);
        let again = raise_challenge(&mut w.book, &mut w.dag, &mut w.ledger, w.keys.key(0), &w.node, 10, 3);
        assert!(matches!(again, Err(PolError::AlreadyChallenged(_))));
        assert!(w.ledger.conservation_holds());
    }

    #[test]
    fn test_exact_replay_at_zero_noise() {
        let mut w = world();
        let c = raise_challenge(&mut w.book, &mut w.dag, &mut w.ledger, w.keys.key(2), &w.node, 10, 2).unwrap();
        w.book.mark_settled(&c, 20, 40);
        let wrong = respond(&mut w.book, &mut w.dag, &mut w.store, w.keys.key(2), &c, &w.data, 0.0, 1, 21);
        assert!(matches!(wrong, Err(PolError::NotAuthor)));
        respond(&mut w.book, &mut w.dag, &mut w.store, w.keys.key(1), &c, &w.data, 0.0, 1, 21).unwrap();
        let ch = w.book.get(&c).unwrap().clone();
        let node = w.dag.get(&w.node).unwrap().clone();
        let mut cache = HashMap::new();
        let mut r = Replayer {
            net: &w.net,
            store: &w.store,
            dag: &w.dag,
            cache: &mut cache,
        };
        let d = r.distance(&node, ch.proof.as_ref().unwrap()).unwrap();
        assert_eq!(d, 0.0);
        let committee: Vec<UserId> = w.keys.ids().collect();
        let v = verify_proof(&ch, &committee, 1e-9, |_| Ok(d));
        assert_eq!(v.outcome, Outcome::LearningProved);
    }

    #[test]
    fn test_timeout_and_late_proof() {
        let mut w = world();
        let c = raise_challenge(&mut w.book, &mut w.dag, &mut w.ledger, w.keys.key(2), &w.node, 10, 2).unwrap();
        w.book.mark_settled(&c, 20, 40);
        assert!(w.book.due(40, 40).is_empty());
        assert_eq!(w.book.due(60, 60).len(), 1);
        let v = verify_proof(w.book.get(&c).unwrap(), &[], 0.1, |_| Ok(0.0));
        assert_eq!(v.outcome, Outcome::LearningInvalidated(InvalidationReason::Timeout));

        respond(&mut w.book, &mut w.dag, &mut w.store, w.keys.key(1), &c, &w.data, 0.0, 1, 61).unwrap();
        let v = verify_proof(w.book.get(&c).unwrap(), &[w.keys.key(0).id()], 0.1, |_| Ok(0.0));
        assert_eq!(v.outcome, Outcome::LearningInvalidated(InvalidationReason::LateProof));
    }

    #[test]
    fn test_majority_rule() {
        let mut w = world();
        let c = raise_challenge(&mut w.book, &mut w.dag, &mut w.ledger, w.keys.key(2), &w.node, 10, 2).unwrap();
        w.book.mark_settled(&c, 20, 40);
        respond(&mut w.book, &mut w.dag, &mut w.store, w.keys.key(1), &c, &w.data, 0.0, 1, 21).unwrap();
        let ch = w.book.get(&c).unwrap();
        let ids: Vec<UserId> = (0..3).map(|i| w.keys.key(i).id()).collect();
        let one_bad = |u: &UserId| if u.index == 0 { Ok(5.0) } else { Ok(0.0) };
        assert_eq!(verify_proof(ch, &ids, 0.1, one_bad).outcome, Outcome::LearningProved);
        let two_bad = |u: &UserId| if u.index < 2 { Ok(5.0) } else { Ok(0.0) };
        assert!(verify_proof(ch, &ids, 0.1, two_bad).invalidated());
    }

    #[test]
    fn test_clearing_both_ways() {
        let mut w = world();
        let c = raise_challenge(&mut w.book, &mut w.dag, &mut w.ledger, w.keys.key(2), &w.node, 10, 2).unwrap();
        let ch = w.book.get(&c).unwrap().clone();
        let mut failed = w.ledger.clone();
        let proved = PolVerdict {
            challenge: c,
            target: w.node,
            distances: vec![],
            epsilon: 0.1,
            outcome: Outcome::LearningProved,
        };
        let out = clear_challenge(&ch, &proved, &mut failed, 0.5);
        assert_eq!(out.challenger_refund, 5);
        assert_eq!(failed.balance(&w.keys.key(2).id()), 95);
        assert!(failed.conservation_holds());

        let mut won = w.ledger.clone();
        won.mint_reward(w.node, w.node, w.keys.key(1).id(), 3, 0);
        let bad = PolVerdict {
            outcome: Outcome::LearningInvalidated(InvalidationReason::Timeout),
            ..proved
        };
        let out = clear_challenge(&ch, &bad, &mut won, 0.5);
        assert_eq!(out.penalty, 10);
        assert_eq!(out.revoked_rewards, 3);
        assert_eq!(won.balance(&w.keys.key(2).id()), 110);
        assert_eq!(won.balance(&w.keys.key(1).id()), 90);
        assert!(won.conservation_holds());
        assert!(won.escrows().is_empty());
    }

    #[test]
    fn test_calibration_zero_noise_and_too_few() {
        let w = world();
        let starts = vec![w.net.init_weights(3)];
        let rho = TrainingSettings::sgd(1, 0.1, 10, 0);
        let cal = calibrate_epsilon(&w.net, &rho, &starts, std::slice::from_ref(&w.data), 0.0, 10, 4).unwrap();
        assert!(cal.honest.iter().all(|&d| d == 0.0));
        assert!(cal.epsilon > 0.0);
        assert!(matches!(
            calibrate_epsilon(&w.net, &rho, &starts, std::slice::from_ref(&w.data), 0.0, 9, 4),
            Err(PolError::TooFewTrials(9))
        ));
        let huge = calibrate_epsilon(&w.net, &rho, &starts, std::slice::from_ref(&w.data), 50.0, 10, 4);
        assert!(matches!(huge, Err(PolError::Inseparable { .. })));
    }
}
