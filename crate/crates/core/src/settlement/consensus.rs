//! Leader-propose / member-recompute agreement.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{Digest, UserId};
use crate::dag::Dag;

use super::election::Committee;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub agreeing: Vec<UserId>,
    pub quorum: usize,
}

impl Tally {
    pub fn accepted(&self) -> bool {
        self.agreeing.len() >= self.quorum
    }
}

/// Every member recomputes the settlement and agrees iff its digest equals
/// the proposal's. Accepted with at least `ceil(2/3 * |committee|)`.
pub fn run_consensus(committee: &Committee, proposal: &Digest, mut recompute: impl FnMut(&UserId) -> Digest) -> Tally {
    let agreeing = committee.members.iter().filter(|m| recompute(m) == *proposal).copied().collect();
    Tally {
        agreeing,
        quorum: committee.quorum(),
    }
}

/// Fault injection for consensus experiments. The default is the honest
/// shared-view case.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    /// Leaders that alter one balance in their proposal.
    pub tampering_leaders: BTreeSet<UserId>,
    /// Members whose recomputation always disagrees.
    pub faulty_members: BTreeSet<UserId>,
    /// Private DAG copies for members that see something else.
    pub member_views: BTreeMap<UserId, Dag>,
}

impl Faults {
    pub fn is_honest(&self) -> bool {
        self.tampering_leaders.is_empty() && self.faulty_members.is_empty() && self.member_views.is_empty()
    }
}
