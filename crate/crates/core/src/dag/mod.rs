//! The DAG ledger: node storage, append validation, tips, and subtree
//! traversal for settlement.

mod export;
mod node;

pub use export::{export_edges_csv, export_jsonl, read_jsonl};
pub use node::{DagNode, NodeDraft, NodeKind, Payload, TaskInfo, TerminationInfo};

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("node {0} references unknown source {1}")]
    UnknownSource(Digest, Digest),
    #[error("node {0} has an invalid id or signature")]
    BadSignature(Digest),
    #[error("node {0} is not newer than its source {1}")]
    NonMonotoneTimestamp(Digest, Digest),
    #[error("node {0} already exists")]
    DuplicateNode(Digest),
    #[error("node {0} is malformed: {1}")]
    Malformed(Digest, String),
}

/// Interval index of a tick: interval `h` covers `[h*delta, (h+1)*delta)`.
pub fn interval_of(tick: u64, delta: u64) -> u64 {
    tick / delta
}

/// Nodes appended so far, in append order (which is a topological order).
#[derive(Debug, Clone, Default)]
pub struct Dag {
    nodes: Vec<DagNode>,
    index: HashMap<Digest, usize>,
    children: Vec<Vec<usize>>,
    root: Option<usize>,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<&DagNode> {
        self.root.map(|i| &self.nodes[i])
    }

    pub fn get(&self, id: &Digest) -> Option<&DagNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.index.contains_key(id)
    }

    /// Append position of a node.
    pub fn position(&self, id: &Digest) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn at(&self, pos: usize) -> &DagNode {
        &self.nodes[pos]
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &DagNode> + ExactSizeIterator {
        self.nodes.iter()
    }

    pub fn children(&self, id: &Digest) -> impl Iterator<Item = &DagNode> {
        self.index
            .get(id)
            .map(|&i| self.children[i].as_slice())
            .unwrap_or(&[])
            .iter()
            .map(|&c| &self.nodes[c])
    }

    pub fn child_count(&self, id: &Digest) -> usize {
        self.index.get(id).map_or(0, |&i| self.children[i].len())
    }

    /// Validates a node against the current DAG without storing it.
    pub fn check_append(&self, node: &DagNode) -> Result<(), DagError> {
        if self.index.contains_key(&node.id) {
            return Err(DagError::DuplicateNode(node.id));
        }
        if !node.verify_signature() {
            return Err(DagError::BadSignature(node.id));
        }
        if node.kind.is_root() {
            if !node.sources.is_empty() {
                return Err(DagError::Malformed(node.id, "root nodes have no sources".into()));
            }
            if self.root.is_some() {
                return Err(DagError::Malformed(node.id, "second root node".into()));
            }
        } else if node.sources.is_empty() {
            return Err(DagError::Malformed(node.id, "empty source list".into()));
        }
        if node.kind == NodeKind::ModelUpdate {
            if node.sources.len() != node.source_evals.len() {
                return Err(DagError::Malformed(node.id, "sources and evaluations differ in length".into()));
            }
            if node.source_evals.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(DagError::Malformed(node.id, "evaluation outside [0, 1]".into()));
            }
        }
        let mut seen = HashSet::with_capacity(node.sources.len());
        for s in &node.sources {
            if !seen.insert(s) {
                return Err(DagError::Malformed(node.id, "repeated source".into()));
            }
            let Some(src) = self.get(s) else {
                return Err(DagError::UnknownSource(node.id, *s));
            };
            if src.timestamp >= node.timestamp {
                return Err(DagError::NonMonotoneTimestamp(node.id, *s));
            }
        }
        Ok(())
    }

    pub fn append_node(&mut self, node: DagNode) -> Result<Digest, DagError> {
        self.check_append(&node)?;
        let pos = self.nodes.len();
        let id = node.id;
        for s in &node.sources {
            let si = self.index[s];
            self.children[si].push(pos);
        }
        if node.kind.is_root() {
            self.root = Some(pos);
        }
        self.index.insert(id, pos);
        self.nodes.push(node);
        self.children.push(Vec::new());
        Ok(id)
    }

    /// Nodes in interval `h` with no child stamped inside that interval.
    /// Settlement nodes are neither tips nor counted as children.
    pub fn find_tips(&self, h: u64, delta: u64) -> BTreeSet<Digest> {
        let (lo, hi) = (h * delta, (h + 1) * delta);
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind != NodeKind::Settlement && n.timestamp >= lo && n.timestamp < hi)
            .filter(|(i, _)| {
                !self.children[*i].iter().any(|&c| {
                    let ch = &self.nodes[c];
                    ch.kind != NodeKind::Settlement && ch.timestamp < hi
                })
            })
            .map(|(_, n)| n.id)
            .collect()
    }

    /// Walks back from `tips` through source lists, stopping at nodes in
    /// `boundary`, the root, and settlement nodes.
    pub fn settle_subtree(&self, h: u64, tips: &BTreeSet<Digest>, boundary: &HashSet<Digest>) -> SubtreeSnapshot {
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<usize> = tips.iter().filter_map(|t| self.index.get(t).copied()).collect();
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if Some(i) == self.root || n.kind == NodeKind::Settlement || boundary.contains(&n.id) {
                continue;
            }
            if !seen.insert(i) {
                continue;
            }
            for s in &n.sources {
                if let Some(&si) = self.index.get(s) {
                    stack.push(si);
                }
            }
        }
        let mut order: Vec<usize> = seen.into_iter().collect();
        order.sort_unstable();
        let members: Vec<Digest> = order.iter().map(|&i| self.nodes[i].id).collect();
        let tips: Vec<Digest> = members.iter().filter(|m| tips.contains(m)).copied().collect();
        SubtreeSnapshot {
            interval: h,
            members,
            tips,
        }
    }

    /// Ids of nodes whose `weight_commit` repeats an earlier node's.
    pub fn duplicate_commits(&self) -> HashSet<Digest> {
        let mut first: HashMap<Digest, Digest> = HashMap::new();
        let mut dups = HashSet::new();
        for n in self.nodes.iter().filter(|n| n.kind == NodeKind::ModelUpdate) {
            if first.insert(n.weight_commit, n.id).is_some() {
                dups.insert(n.id);
            }
        }
        dups
    }

    pub fn authors(&self) -> BTreeSet<UserId> {
        self.nodes.iter().map(|n| n.author).collect()
    }
}

/// One settlement interval's subtree (`lambda_h`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreeSnapshot {
    pub interval: u64,
    /// Members in append order.
    pub members: Vec<Digest>,
    /// Members excluded from this interval's balance computation.
    pub tips: Vec<Digest>,
}

impl SubtreeSnapshot {
    pub fn balance_eligible(&self) -> impl Iterator<Item = &Digest> {
        self.members.iter().filter(|m| !self.tips.contains(m))
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Registration and solvency view used when screening incoming nodes.
pub trait Membership {
    fn is_registered(&self, user: &UserId) -> bool;
    fn is_solvent(&self, user: &UserId) -> bool;
}

/// Global-DAG view: no registration gate.
pub struct OpenMembership;

impl Membership for OpenMembership {
    fn is_registered(&self, _: &UserId) -> bool {
        true
    }
    fn is_solvent(&self, _: &UserId) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    BadSignature,
    NotRegistered,
    InsufficientBalance,
    UnknownSource,
    NonMonotoneTimestamp,
    Duplicate,
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Accept,
    Reject(Rejection),
}

/// Screens an incoming node: signature, registration, solvency, then the
/// structural checks `append_node` would apply.
pub fn verify_incoming(dag: &Dag, node: &DagNode, members: &dyn Membership) -> Admission {
    if !node.verify_signature() {
        return Admission::Reject(Rejection::BadSignature);
    }
    if !node.kind.is_root() && !members.is_registered(&node.author) {
        return Admission::Reject(Rejection::NotRegistered);
    }
    if !members.is_solvent(&node.author) {
        return Admission::Reject(Rejection::InsufficientBalance);
    }
    match dag.check_append(node) {
        Ok(()) => Admission::Accept,
        Err(DagError::UnknownSource(..)) => Admission::Reject(Rejection::UnknownSource),
        Err(DagError::BadSignature(_)) => Admission::Reject(Rejection::BadSignature),
        Err(DagError::NonMonotoneTimestamp(..)) => Admission::Reject(Rejection::NonMonotoneTimestamp),
        Err(DagError::DuplicateNode(_)) => Admission::Reject(Rejection::Duplicate),
        Err(DagError::Malformed(_, why)) => Admission::Reject(Rejection::Malformed(why)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;

    fn key(i: u32) -> Keypair {
        Keypair::derive(7, i)
    }

    fn genesis() -> DagNode {
        NodeDraft::bare(key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(&key(0))
    }

    fn update(author: u32, sources: &[Digest], t: u64) -> DagNode {
        let mut d = NodeDraft::bare(key(author).id(), NodeKind::ModelUpdate, sources.to_vec(), t, Payload::None);
        d.source_evals = vec![0.5; sources.len()];
        d.sign(&key(author))
    }

    #[test]
    fn test_smallest_dag() {
        let mut dag = Dag::new();
        let g = dag.append_node(genesis()).unwrap();
        let c = dag.append_node(update(1, &[g], 1)).unwrap();
        assert_eq!(dag.len(), 2);
        assert_eq!(dag.children(&g).map(|n| n.id).collect::<Vec<_>>(), vec![c]);
    }

    #[test]
    fn test_append_errors() {
        let mut dag = Dag::new();
        let g = dag.append_node(genesis()).unwrap();
        assert!(matches!(dag.append_node(genesis()), Err(DagError::DuplicateNode(_))));
        let missing = crate::crypto::hash(b"nope");
        assert!(matches!(
            dag.append_node(update(1, &[missing], 3)),
            Err(DagError::UnknownSource(..))
        ));
        assert!(matches!(
            dag.append_node(update(1, &[g], 0)),
            Err(DagError::NonMonotoneTimestamp(..))
        ));
        let mut forged = update(1, &[g], 2);
        forged.author = key(2).id();
        assert!(matches!(dag.append_node(forged), Err(DagError::BadSignature(_))));
        let mut bad = NodeDraft::bare(key(1).id(), NodeKind::ModelUpdate, vec![g], 2, Payload::None);
        bad.source_evals = vec![];
        assert!(matches!(dag.append_node(bad.sign(&key(1))), Err(DagError::Malformed(..))));
    }

    #[test]
    fn test_tips_chain_and_fan() {
        let mut dag = Dag::new();
        let g = dag.append_node(genesis()).unwrap();
        let a = dag.append_node(update(1, &[g], 1)).unwrap();
        let b = dag.append_node(update(1, &[a], 2)).unwrap();
        assert_eq!(dag.find_tips(0, 10), BTreeSet::from([b]));

        let mut fan = Dag::new();
        let g = fan.append_node(genesis()).unwrap();
        let kids: BTreeSet<Digest> = (1..=3).map(|i| fan.append_node(update(i, &[g], i as u64)).unwrap()).collect();
        assert_eq!(fan.find_tips(0, 10), kids);
    }

    #[test]
    fn test_subtree_two_intervals() {
        // g -> a -> b -> c in interval 0, d -> c in interval 1.
        let mut dag = Dag::new();
        let g = dag.append_node(genesis()).unwrap();
        let a = dag.append_node(update(1, &[g], 1)).unwrap();
        let b = dag.append_node(update(2, &[a], 2)).unwrap();
        let c = dag.append_node(update(3, &[b], 3)).unwrap();
        let tips = dag.find_tips(0, 10);
        let s1 = dag.settle_subtree(0, &tips, &HashSet::new());
        assert_eq!(s1.members, vec![a, b, c]);
        assert_eq!(s1.balance_eligible().copied().collect::<Vec<_>>(), vec![a, b]);

        let d = dag.append_node(update(1, &[c], 12)).unwrap();
        let boundary: HashSet<Digest> = s1.members.iter().copied().collect();
        let s2 = dag.settle_subtree(1, &dag.find_tips(1, 10), &boundary);
        assert_eq!(s2.members, vec![d]);
        assert!(dag.child_count(&c) == 1);

        let s3 = dag.settle_subtree(2, &dag.find_tips(2, 10), &boundary);
        assert!(s3.is_empty());
    }

    struct Registry(Vec<UserId>, Vec<UserId>);
    impl Membership for Registry {
        fn is_registered(&self, u: &UserId) -> bool {
            self.0.contains(u)
        }
        fn is_solvent(&self, u: &UserId) -> bool {
            !self.1.contains(u)
        }
    }

    #[test]
    fn test_verify_incoming() {
        let mut dag = Dag::new();
        let g = dag.append_node(genesis()).unwrap();
        let reg = Registry(vec![key(1).id(), key(2).id()], vec![key(2).id()]);
        assert_eq!(
            verify_incoming(&dag, &update(3, &[g], 1), &reg),
            Admission::Reject(Rejection::NotRegistered)
        );
        assert_eq!(verify_incoming(&dag, &update(1, &[g], 1), &reg), Admission::Accept);
        assert_eq!(
            verify_incoming(&dag, &update(2, &[g], 1), &reg),
            Admission::Reject(Rejection::InsufficientBalance)
        );
    }
}
