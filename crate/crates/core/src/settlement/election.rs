//! Balance-weighted committee election.
//!
//! User `k` owns an arc `L_k = min(1, c * B_k / sum(B))` of the unit hash
//! ring, where `c` is the committee size. A user whose VRF value `u_k`
//! (read as a fraction of 2^256) falls inside its arc qualifies directly.
//! Ranking everyone by `u_k / L_k` and keeping the `c` smallest takes all
//! in-arc users first (their ratio is below 1) and then tops up or trims
//! deterministically. The leader is the member with the smallest `u_k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{vrf_eval, vrf_verify, Digest, KeyRing, UserId, VrfOutput};
use crate::ledger::Ledger;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("only {eligible} users hold a positive balance, committee needs {needed}")]
    NotEnoughEligible { eligible: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub seed: Digest,
    /// Members ranked by `u / arc`.
    pub members: Vec<UserId>,
    pub leader: UserId,
    pub proofs: Vec<(UserId, VrfOutput)>,
}

impl Committee {
    pub fn contains(&self, user: &UserId) -> bool {
        self.members.contains(user)
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// `ceil(2/3 * size)`.
    pub fn quorum(&self) -> usize {
        (2 * self.members.len()).div_ceil(3)
    }
}

/// Elects `size` members among users with positive balance.
pub fn elect_committee(keys: &KeyRing, ledger: &Ledger, seed: &Digest, size: usize) -> Result<Committee, ElectionError> {
    let balances: Vec<(UserId, u64)> = ledger
        .balances()
        .iter()
        .filter(|(u, &b)| b > 0 && keys.key_of(u).is_some())
        .map(|(u, &b)| (*u, b))
        .collect();
    elect_from_balances(keys, &balances, seed, size)
}

pub fn elect_from_balances(keys: &KeyRing, balances: &[(UserId, u64)], seed: &Digest, size: usize) -> Result<Committee, ElectionError> {
    let eligible: Vec<(UserId, u64)> = balances.iter().copied().filter(|&(_, b)| b > 0).collect();
    if size == 0 || eligible.len() < size {
        return Err(ElectionError::NotEnoughEligible {
            eligible: eligible.len(),
            needed: size,
        });
    }
    let total: u64 = eligible.iter().map(|&(_, b)| b).sum();
    let mut ranked: Vec<(f64, f64, UserId, VrfOutput)> = Vec::with_capacity(eligible.len());
    for &(user, balance) in &eligible {
        let key = keys.key_of(&user).expect("eligible users have keys");
        let out = vrf_eval(key, seed.as_bytes());
        debug_assert!(vrf_verify(&user, seed.as_bytes(), &out));
        let u = out.hash.unit_fraction();
        let arc = (size as f64 * balance as f64 / total as f64).min(1.0);
        ranked.push((u / arc, u, user, out));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    ranked.truncate(size);
    let leader = ranked
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)))
        .map(|r| r.2)
        .expect("non-empty committee");
    Ok(Committee {
        seed: *seed,
        members: ranked.iter().map(|r| r.2).collect(),
        leader,
        proofs: ranked.into_iter().map(|r| (r.2, r.3)).collect(),
    })
}

/// Checks every member's VRF proof against the seed.
pub fn verify_committee(c: &Committee) -> bool {
    c.members.len() == c.proofs.len()
        && c.proofs
            .iter()
            .zip(&c.members)
            .all(|((u, out), m)| u == m && vrf_verify(u, c.seed.as_bytes(), out))
        && c.members.contains(&c.leader)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    #[test]
    fn test_zero_balance_never_elected() {
        let keys = KeyRing::derive(1, 2);
        let ids: Vec<UserId> = keys.ids().collect();
        for s in 0..200u32 {
            let seed = hash(&s.to_le_bytes());
            let c = elect_from_balances(&keys, &[(ids[0], 10), (ids[1], 0)], &seed, 1).unwrap();
            assert_eq!(c.members, vec![ids[0]]);
        }
        let err = elect_from_balances(&keys, &[(ids[0], 10), (ids[1], 0)], &hash(b"s"), 2).unwrap_err();
        assert_eq!(err, ElectionError::NotEnoughEligible { eligible: 1, needed: 2 });
    }

    #[test]
    fn test_deterministic_and_verifiable() {
        let keys = KeyRing::derive(3, 10);
        let bal: Vec<(UserId, u64)> = keys.ids().map(|u| (u, 5 + u.index as u64)).collect();
        let a = elect_from_balances(&keys, &bal, &hash(b"seed"), 3).unwrap();
        let b = elect_from_balances(&keys, &bal, &hash(b"seed"), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.size(), 3);
        assert!(verify_committee(&a));
        assert!(a.contains(&a.leader));
        let mut forged = a.clone();
        forged.seed = hash(b"other");
        assert!(!verify_committee(&forged));
    }

    #[test]
    fn test_quorum_arithmetic() {
        let keys = KeyRing::derive(3, 7);
        let bal: Vec<(UserId, u64)> = keys.ids().map(|u| (u, 1)).collect();
        let c = elect_from_balances(&keys, &bal, &hash(b"q"), 7).unwrap();
        assert_eq!(c.quorum(), 5);
    }
}
