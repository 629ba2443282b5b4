//! Periodic settlement: committee election, subtree snapshot, balance
//! updates, consensus, and the settlement chain.

mod consensus;
mod election;

pub use consensus::{run_consensus, Faults, Tally};
pub use election::{elect_committee, elect_from_balances, verify_committee, Committee, ElectionError};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, interval_seed, sign, Digest, KeyRing, Signature, UserId};
use crate::dag::{Dag, NodeDraft, NodeKind, Payload, SubtreeSnapshot, TerminationInfo};
use crate::ledger::{Ledger, RewardRecord};
use crate::pol::{clear_challenge, verify_proof, Clearing, InvalidationReason, PolBook, PolChallenge, PolParams, PolVerdict};

#[derive(Debug, Error)]
pub enum SettlementError {
    #[error(transparent)]
    Election(#[from] ElectionError),
    #[error("no committee agreed on interval {interval} after {rounds} rounds")]
    ConsensusFailure { interval: u64, rounds: u32 },
    #[error("token conservation violated at interval {0}")]
    Conservation(u64),
    #[error("settlement tick {tick} is not the end of interval {expected}")]
    OutOfOrder { tick: u64, expected: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementConfig {
    /// Interval length in ticks.
    pub delta: u64,
    pub committee_size: usize,
    /// Tokens minted per valid cross-author reference; 0 disables minting.
    pub reward_per_reference: u64,
    pub max_rounds: u32,
    pub pol: PolParams,
}

impl Default for SettlementConfig {
    fn default() -> Self {
        Self {
            delta: 20,
            committee_size: 7,
            reward_per_reference: 1,
            max_rounds: 5,
            pol: PolParams::default(),
        }
    }
}

/// A pending fine from task monitoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Penalty {
    pub user: UserId,
    pub amount: u64,
    pub node: Digest,
    /// Escrow slashed first (the task registration deposit).
    pub escrow: Option<String>,
}

/// Escrow keys shared with the task module.
pub fn task_escrow_key(task_id: u64) -> String {
    format!("task/{task_id}")
}

pub fn registration_escrow_key(task_id: u64, user: &UserId) -> String {
    format!("reg/{task_id}/{:08}", user.index)
}

/// Everything a settlement reads and rewrites.
#[derive(Debug, Clone, Default)]
pub struct SettlementState {
    pub next_interval: u64,
    pub ledger: Ledger,
    pub settled: HashSet<Digest>,
    /// Tips waiting for a child before they count for balances.
    pub pending_tips: Vec<Digest>,
    pub eligible: HashSet<Digest>,
    pub invalidated: BTreeSet<Digest>,
    pub collected: BTreeSet<Digest>,
    pub last_digest: Digest,
    pub last_node: Option<Digest>,
}

impl SettlementState {
    pub fn new(ledger: Ledger) -> Self {
        Self { ledger, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub verdict: PolVerdict,
    pub clearing: Clearing,
}

/// One link of the settlement chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub interval: u64,
    pub tick: u64,
    pub previous: Digest,
    pub subtree: SubtreeSnapshot,
    pub newly_eligible: Vec<Digest>,
    pub rewards: Vec<RewardRecord>,
    pub invalidated: Vec<Digest>,
    pub pol_verdicts: Vec<VerdictEntry>,
    pub collected_terminations: Vec<Digest>,
    pub penalties: Vec<Penalty>,
    pub balances: Vec<(UserId, u64)>,
    pub escrow_total: u64,
    pub minted: u64,
    pub burned: u64,
    pub initial_supply: u64,
    pub committee: Vec<UserId>,
    pub leader: UserId,
    pub seed: Digest,
    pub round: u32,
    pub signatures: Vec<(UserId, Signature)>,
}

impl SettlementRecord {
    /// Digest of everything except the signatures.
    pub fn digest(&self) -> Digest {
        let mut unsigned = self.clone();
        unsigned.signatures.clear();
        hash(&serde_json::to_vec(&unsigned).expect("record serializes"))
    }

    pub fn conserves(&self) -> bool {
        let total: u64 = self.balances.iter().map(|(_, b)| b).sum();
        total + self.escrow_total + self.burned == self.initial_supply + self.minted
    }

    pub fn balance(&self, user: &UserId) -> u64 {
        self.balances.iter().find(|(u, _)| u == user).map_or(0, |(_, b)| *b)
    }
}

/// Inputs shared by every member's recomputation of one interval.
pub struct IntervalContext<'a> {
    pub interval: u64,
    pub tick: u64,
    pub delta: u64,
    pub committee: &'a Committee,
    pub seed: Digest,
    pub round: u32,
    pub verdicts: &'a [PolVerdict],
    pub book: &'a PolBook,
    pub penalties: &'a [Penalty],
    pub reward_per_reference: u64,
    pub refund_fraction: f64,
}

/// Pure settlement of one interval over `view`.
pub fn compute_settlement(state: &SettlementState, view: &Dag, ctx: &IntervalContext) -> (SettlementRecord, SettlementState) {
    let mut next = state.clone();
    let h = ctx.interval;
    let end = (h + 1) * ctx.delta;

    let tips = view.find_tips(h, ctx.delta);
    let subtree = view.settle_subtree(h, &tips, &state.settled);

    // Tips from earlier intervals that have since gained a child.
    let mut woken = Vec::new();
    next.pending_tips.retain(|t| {
        let has_child = view.children(t).any(|c| c.kind != NodeKind::Settlement && c.timestamp < end);
        if has_child {
            woken.push(*t);
        }
        !has_child
    });
    let mut newly: Vec<Digest> = woken;
    newly.extend(subtree.balance_eligible().copied());
    newly.sort_by_key(|d| view.position(d).unwrap_or(usize::MAX));
    next.pending_tips.extend(subtree.tips.iter().copied());
    next.settled.extend(subtree.members.iter().copied());
    next.eligible.extend(newly.iter().copied());

    // PoL clearing first, so revocations also block this interval's payments.
    let mut pol_verdicts = Vec::new();
    let mut invalidated = Vec::new();
    for v in ctx.verdicts {
        let Some(ch) = ctx.book.get(&v.challenge) else { continue };
        let clearing = clear_challenge(ch, v, &mut next.ledger, ctx.refund_fraction);
        if v.invalidated() && next.invalidated.insert(v.target) {
            invalidated.push(v.target);
        }
        pol_verdicts.push(VerdictEntry {
            verdict: v.clone(),
            clearing,
        });
    }

    let reward_start = next.ledger.rewards().len();
    if ctx.reward_per_reference > 0 {
        for id in &newly {
            let Some(n) = view.get(id) else { continue };
            if n.kind != NodeKind::ModelUpdate || next.invalidated.contains(id) {
                continue;
            }
            for s in &n.sources {
                let Some(src) = view.get(s) else { continue };
                if src.kind == NodeKind::ModelUpdate && src.author != n.author && !next.invalidated.contains(s) {
                    next.ledger.mint_reward(*id, *s, src.author, ctx.reward_per_reference, h);
                }
            }
        }
    }
    let rewards = next.ledger.rewards()[reward_start..].to_vec();

    let mut penalties = Vec::new();
    for p in ctx.penalties {
        let mut left = p.amount;
        if let Some(key) = &p.escrow {
            left -= next.ledger.burn_escrow(key, left).unwrap_or(0);
        }
        next.ledger.burn_balance(&p.user, left);
        penalties.push(p.clone());
    }

    let mut collected_terminations = Vec::new();
    for n in view.iter() {
        if n.kind != NodeKind::TaskTermination || n.timestamp >= end || next.collected.contains(&n.id) {
            continue;
        }
        if let Payload::Termination(info) = &n.payload {
            apply_termination(&mut next.ledger, info);
        }
        next.collected.insert(n.id);
        collected_terminations.push(n.id);
    }

    let ledger = &next.ledger;
    let record = SettlementRecord {
        interval: h,
        tick: ctx.tick,
        previous: state.last_digest,
        subtree,
        newly_eligible: newly,
        rewards,
        invalidated,
        pol_verdicts,
        collected_terminations,
        penalties,
        balances: ledger.balances().iter().map(|(u, b)| (*u, *b)).collect(),
        escrow_total: ledger.total_escrow(),
        minted: ledger.minted(),
        burned: ledger.burned(),
        initial_supply: ledger.initial_supply(),
        committee: ctx.committee.members.clone(),
        leader: ctx.committee.leader,
        seed: ctx.seed,
        round: ctx.round,
        signatures: Vec::new(),
    };
    next.next_interval = h + 1;
    next.last_digest = record.digest();
    (record, next)
}

/// Pays a termination node's allocation from the task escrow, refunds the
/// residual to the publisher, and returns registration deposits.
fn apply_termination(ledger: &mut Ledger, info: &TerminationInfo) {
    let key = task_escrow_key(info.task_id);
    for (user, amount) in &info.allocation {
        let _ = ledger.release(&key, user, *amount);
    }
    let _ = ledger.close_escrow(&key);
    let prefix = format!("reg/{}/", info.task_id);
    let regs: Vec<String> = ledger.escrows().keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
    for k in regs {
        let _ = ledger.close_escrow(&k);
    }
}

/// Drives settlements and owns the chain.
#[derive(Debug, Clone)]
pub struct Settler {
    pub cfg: SettlementConfig,
    pub state: SettlementState,
    pub chain: Vec<SettlementRecord>,
}

impl Settler {
    pub fn new(cfg: SettlementConfig, ledger: Ledger) -> Self {
        Self {
            cfg,
            state: SettlementState::new(ledger),
            chain: Vec::new(),
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.state.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.state.ledger
    }

    pub fn is_invalidated(&self, node: &Digest) -> bool {
        self.state.invalidated.contains(node)
    }

    /// Settles the interval ending at `tick`. `replay` returns one
    /// verifier's replay distance for a challenge.
    #[allow(clippy::too_many_arguments)]
    pub fn settle(
        &mut self,
        tick: u64,
        dag: &mut Dag,
        keys: &KeyRing,
        book: &mut PolBook,
        mut replay: impl FnMut(&Dag, &PolChallenge, &UserId) -> Result<f64, InvalidationReason>,
        penalties: &[Penalty],
        faults: &Faults,
    ) -> Result<&SettlementRecord, SettlementError> {
        let delta = self.cfg.delta;
        let h = self.state.next_interval;
        if tick != (h + 1) * delta {
            return Err(SettlementError::OutOfOrder { tick, expected: h });
        }
        let base_seed = interval_seed(&self.state.last_digest, h);
        for round in 0..self.cfg.max_rounds {
            let seed = if round == 0 {
                base_seed
            } else {
                hash_parts([base_seed.as_bytes().as_slice(), &round.to_le_bytes()])
            };
            let committee = elect_committee(keys, &self.state.ledger, &seed, self.cfg.committee_size)?;
            let verdicts: Vec<PolVerdict> = book
                .due(h * delta, tick)
                .into_iter()
                .map(|c| verify_proof(c, &committee.members, self.cfg.pol.epsilon, |m| replay(dag, c, m)))
                .collect();
            let ctx = IntervalContext {
                interval: h,
                tick,
                delta,
                committee: &committee,
                seed,
                round,
                verdicts: &verdicts,
                book,
                penalties,
                reward_per_reference: self.cfg.reward_per_reference,
                refund_fraction: self.cfg.pol.refund_fraction,
            };
            let view_of = |u: &UserId| faults.member_views.get(u).unwrap_or(dag);
            let (honest_record, honest_state) = compute_settlement(&self.state, dag, &ctx);
            let honest_digest = honest_record.digest();

            let (mut proposal, proposal_state) = if faults.member_views.contains_key(&committee.leader) {
                compute_settlement(&self.state, view_of(&committee.leader), &ctx)
            } else {
                (honest_record, honest_state)
            };
            if faults.tampering_leaders.contains(&committee.leader) {
                if let Some(first) = proposal.balances.first_mut() {
                    first.1 += 1;
                }
            }
            let digest = proposal.digest();
            let tally = run_consensus(&committee, &digest, |m| {
                if faults.faulty_members.contains(m) {
                    hash_parts([b"faulty".as_slice(), digest.as_bytes()])
                } else if faults.member_views.contains_key(m) {
                    compute_settlement(&self.state, view_of(m), &ctx).0.digest()
                } else {
                    honest_digest
                }
            });
            if !tally.accepted() {
                continue;
            }
            if !proposal_state.ledger.conservation_holds() {
                return Err(SettlementError::Conservation(h));
            }
            proposal.signatures = tally
                .agreeing
                .iter()
                .map(|m| (*m, sign(keys.key_of(m).expect("member key"), digest.as_bytes())))
                .collect();
            self.commit(proposal, proposal_state, verdicts, dag, keys, book);
            return Ok(self.chain.last().expect("just pushed"));
        }
        Err(SettlementError::ConsensusFailure {
            interval: h,
            rounds: self.cfg.max_rounds,
        })
    }

    fn commit(
        &mut self,
        record: SettlementRecord,
        state: SettlementState,
        verdicts: Vec<PolVerdict>,
        dag: &mut Dag,
        keys: &KeyRing,
        book: &mut PolBook,
    ) {
        let tick = record.tick;
        let leader = keys.key_of(&record.leader).expect("leader key");
        let timeout = self.cfg.pol.timeout_intervals * self.cfg.delta;
        for id in &record.subtree.members {
            if dag.get(id).is_some_and(|n| n.kind == NodeKind::PolChallenge) {
                book.mark_settled(id, tick, timeout);
            }
        }
        for v in verdicts {
            let source = book
                .get(&v.challenge)
                .and_then(|c| c.proof.as_ref().map(|p| p.node))
                .unwrap_or(v.challenge);
            let node = NodeDraft::bare(
                record.leader,
                NodeKind::PolResult,
                vec![source],
                tick,
                Payload::Result {
                    challenge: v.challenge,
                    proved: !v.invalidated(),
                },
            )
            .sign(leader);
            let _ = dag.append_node(node);
            book.record_verdict(v);
        }
        let digest = record.digest();
        let anchor = state.last_node.or_else(|| dag.root().map(|r| r.id));
        self.state = state;
        if let Some(anchor) = anchor {
            let node = NodeDraft::bare(
                record.leader,
                NodeKind::Settlement,
                vec![anchor],
                tick,
                Payload::Settlement {
                    interval: record.interval,
                    record: digest,
                },
            )
            .sign(leader);
            if let Ok(id) = dag.append_node(node) {
                self.state.last_node = Some(id);
            }
        }
        self.chain.push(record);
    }

    /// Settlement chain as JSON lines.
    pub fn export_chain<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.chain {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Live reward totals per user.
    pub fn reward_totals(&self) -> BTreeMap<UserId, u64> {
        self.state.ledger.reward_totals()
    }
}

/// Checks the chain links, signatures quorum, and conservation of every
/// record.
pub fn audit_chain(chain: &[SettlementRecord]) -> Result<(), String> {
    let mut prev = Digest::ZERO;
    for r in chain {
        if r.previous != prev {
            return Err(format!("interval {} does not link to its predecessor", r.interval));
        }
        if !r.conserves() {
            return Err(format!("interval {} breaks token conservation", r.interval));
        }
        let digest = r.digest();
        let valid = r
            .signatures
            .iter()
            .filter(|(u, s)| r.committee.contains(u) && crate::crypto::verify(u, digest.as_bytes(), s))
            .count();
        if valid < (2 * r.committee.len()).div_ceil(3) {
            return Err(format!("interval {} lacks a signature quorum", r.interval));
        }
        prev = digest;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;

    fn setup(users: u32) -> (KeyRing, Dag, Settler) {
        let keys = KeyRing::derive(11, users);
        let mut ledger = Ledger::new();
        for u in keys.ids() {
            ledger.fund(u, 100);
        }
        let mut dag = Dag::new();
        dag.append_node(NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(keys.key(0)))
            .unwrap();
        let cfg = SettlementConfig {
            delta: 10,
            committee_size: 3,
            ..SettlementConfig::default()
        };
        (keys, dag, Settler::new(cfg, ledger))
    }

    fn add(dag: &mut Dag, key: &Keypair, sources: &[Digest], t: u64) -> Digest {
        let mut d = NodeDraft::bare(key.id(), NodeKind::ModelUpdate, sources.to_vec(), t, Payload::None);
        d.source_evals = vec![0.5; sources.len()];
        dag.append_node(d.sign(key)).unwrap()
    }

    fn no_replay(_: &Dag, _: &PolChallenge, _: &UserId) -> Result<f64, InvalidationReason> {
        Ok(0.0)
    }

    #[test]
    fn test_empty_interval_extends_chain() {
        let (keys, mut dag, mut s) = setup(4);
        let mut book = PolBook::new();
        let r = s
            .settle(10, &mut dag, &keys, &mut book, no_replay, &[], &Faults::default())
            .unwrap();
        assert!(r.rewards.is_empty());
        assert_eq!(s.chain.len(), 1);
        s.settle(20, &mut dag, &keys, &mut book, no_replay, &[], &Faults::default())
            .unwrap();
        assert_eq!(s.chain[1].previous, s.chain[0].digest());
        audit_chain(&s.chain).unwrap();
    }

    #[test]
    fn test_reference_reward_and_self_reference() {
        let (keys, mut dag, mut s) = setup(4);
        let g = dag.root().unwrap().id;
        let a = add(&mut dag, keys.key(1), &[g], 1);
        let b = add(&mut dag, keys.key(2), &[a], 2);
        let c = add(&mut dag, keys.key(2), &[b], 3);
        add(&mut dag, keys.key(3), &[c], 4);
        let mut book = PolBook::new();
        let r = s
            .settle(10, &mut dag, &keys, &mut book, no_replay, &[], &Faults::default())
            .unwrap();
        // b -> a pays user 1; c -> b is a self-reference; the tip's reference to c waits.
        assert_eq!(r.rewards.len(), 1);
        assert_eq!(r.rewards[0].recipient, keys.key(1).id());
        assert_eq!(r.balance(&keys.key(1).id()), 101);
        assert!(r.conserves());
    }

    #[test]
    fn test_pending_tip_pays_later() {
        let (keys, mut dag, mut s) = setup(4);
        let g = dag.root().unwrap().id;
        let a = add(&mut dag, keys.key(1), &[g], 1);
        let b = add(&mut dag, keys.key(2), &[a], 2);
        let mut book = PolBook::new();
        let r = s
            .settle(10, &mut dag, &keys, &mut book, no_replay, &[], &Faults::default())
            .unwrap();
        assert!(r.rewards.is_empty());
        add(&mut dag, keys.key(3), &[b], 12);
        let r = s
            .settle(20, &mut dag, &keys, &mut book, no_replay, &[], &Faults::default())
            .unwrap();
        assert_eq!(r.newly_eligible, vec![b]);
        assert_eq!(r.rewards.len(), 1);
        assert_eq!(r.rewards[0].target, a);
    }

    #[test]
    fn test_tampered_leader_rejected_then_reelected() {
        let (keys, mut dag, mut s) = setup(6);
        let mut book = PolBook::new();
        let seed = interval_seed(&Digest::ZERO, 0);
        let first = elect_committee(&keys, s.ledger(), &seed, 3).unwrap();
        let faults = Faults {
            tampering_leaders: BTreeSet::from([first.leader]),
            ..Faults::default()
        };
        let r = s.settle(10, &mut dag, &keys, &mut book, no_replay, &[], &faults).unwrap();
        assert!(r.round >= 1);
        assert_ne!(r.leader, first.leader);
    }

    #[test]
    fn test_one_faulty_member_of_seven_tolerated() {
        let (keys, mut dag, mut s) = setup(9);
        s.cfg.committee_size = 7;
        let mut book = PolBook::new();
        let seed = interval_seed(&Digest::ZERO, 0);
        let c = elect_committee(&keys, s.ledger(), &seed, 7).unwrap();
        let faulty = *c.members.iter().find(|m| **m != c.leader).unwrap();
        let faults = Faults {
            faulty_members: BTreeSet::from([faulty]),
            ..Faults::default()
        };
        let r = s.settle(10, &mut dag, &keys, &mut book, no_replay, &[], &faults).unwrap();
        assert_eq!(r.round, 0);
        assert_eq!(r.signatures.len(), 6);
    }

    #[test]
    fn test_all_faulty_exhausts_rounds() {
        let (keys, mut dag, mut s) = setup(3);
        let mut book = PolBook::new();
        let faults = Faults {
            faulty_members: keys.ids().collect(),
            ..Faults::default()
        };
        let err = s.settle(10, &mut dag, &keys, &mut book, no_replay, &[], &faults).unwrap_err();
        assert!(matches!(err, SettlementError::ConsensusFailure { .. }));
    }

    #[test]
    fn test_out_of_order_tick() {
        let (keys, mut dag, mut s) = setup(3);
        let mut book = PolBook::new();
        let err = s
            .settle(20, &mut dag, &keys, &mut book, no_replay, &[], &Faults::default())
            .unwrap_err();
        assert!(matches!(err, SettlementError::OutOfOrder { .. }));
    }
}
