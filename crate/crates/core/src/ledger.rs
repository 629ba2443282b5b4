//! Token balances, escrow accounts, and the reference-reward register.
//!
//! Supply accounting: `sum(balances) + sum(escrows) + burned` always equals
//! `initial_supply + minted`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("{user} holds {have} tokens, needs {need}")]
    InsufficientBalance { user: UserId, have: u64, need: u64 },
    #[error("escrow {0} already exists")]
    DuplicateEscrow(String),
    #[error("escrow {0} does not exist")]
    UnknownEscrow(String),
    #[error("escrow {key} holds {have}, cannot release {need}")]
    EscrowShort { key: String, have: u64, need: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escrow {
    pub owner: UserId,
    pub amount: u64,
}

/// One reference payment: `referrer` cited `target`, paying `recipient`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub referrer: Digest,
    pub target: Digest,
    pub recipient: UserId,
    pub amount: u64,
    pub interval: u64,
    pub revoked: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Ledger {
    balances: BTreeMap<UserId, u64>,
    escrows: BTreeMap<String, Escrow>,
    initial_supply: u64,
    minted: u64,
    burned: u64,
    rewards: Vec<RewardRecord>,
    /// Revocations that exceeded the recipient's balance.
    shortfall: BTreeMap<UserId, u64>,
    by_node: HashMap<Digest, Vec<usize>>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Credits part of the initial supply.
    pub fn fund(&mut self, user: UserId, amount: u64) {
        *self.balances.entry(user).or_insert(0) += amount;
        self.initial_supply += amount;
    }

    pub fn balance(&self, user: &UserId) -> u64 {
        self.balances.get(user).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<UserId, u64> {
        &self.balances
    }

    pub fn escrows(&self) -> &BTreeMap<String, Escrow> {
        &self.escrows
    }

    pub fn escrow_amount(&self, key: &str) -> Option<u64> {
        self.escrows.get(key).map(|e| e.amount)
    }

    pub fn initial_supply(&self) -> u64 {
        self.initial_supply
    }

    pub fn minted(&self) -> u64 {
        self.minted
    }

    pub fn burned(&self) -> u64 {
        self.burned
    }

    pub fn total_balances(&self) -> u64 {
        self.balances.values().sum()
    }

    pub fn total_escrow(&self) -> u64 {
        self.escrows.values().map(|e| e.amount).sum()
    }

    pub fn conservation_holds(&self) -> bool {
        self.total_balances() + self.total_escrow() + self.burned == self.initial_supply + self.minted
    }

    fn debit(&mut self, user: &UserId, amount: u64) -> Result<(), LedgerError> {
        let have = self.balance(user);
        if have < amount {
            return Err(LedgerError::InsufficientBalance {
                user: *user,
                have,
                need: amount,
            });
        }
        *self.balances.entry(*user).or_insert(0) -= amount;
        Ok(())
    }

    fn credit(&mut self, user: &UserId, amount: u64) {
        *self.balances.entry(*user).or_insert(0) += amount;
    }

    pub fn transfer(&mut self, from: &UserId, to: &UserId, amount: u64) -> Result<(), LedgerError> {
        self.debit(from, amount)?;
        self.credit(to, amount);
        Ok(())
    }

    /// Moves up to `amount` (whatever `from` holds); returns the amount moved.
    pub fn transfer_capped(&mut self, from: &UserId, to: &UserId, amount: u64) -> u64 {
        let moved = amount.min(self.balance(from));
        if moved > 0 {
            *self.balances.entry(*from).or_insert(0) -= moved;
            self.credit(to, moved);
        }
        moved
    }

    /// Burns up to `amount` from a balance; returns the amount burned.
    pub fn burn_balance(&mut self, user: &UserId, amount: u64) -> u64 {
        let taken = amount.min(self.balance(user));
        if taken > 0 {
            *self.balances.entry(*user).or_insert(0) -= taken;
            self.burned += taken;
        }
        taken
    }

    pub fn open_escrow(&mut self, key: impl Into<String>, owner: &UserId, amount: u64) -> Result<(), LedgerError> {
        let key = key.into();
        if self.escrows.contains_key(&key) {
            return Err(LedgerError::DuplicateEscrow(key));
        }
        self.debit(owner, amount)?;
        self.escrows.insert(key, Escrow { owner: *owner, amount });
        Ok(())
    }

    fn escrow_mut(&mut self, key: &str) -> Result<&mut Escrow, LedgerError> {
        self.escrows.get_mut(key).ok_or_else(|| LedgerError::UnknownEscrow(key.to_string()))
    }

    /// Pays `amount` out of an escrow to `to`.
    pub fn release(&mut self, key: &str, to: &UserId, amount: u64) -> Result<(), LedgerError> {
        let e = self.escrow_mut(key)?;
        if e.amount < amount {
            return Err(LedgerError::EscrowShort {
                key: key.to_string(),
                have: e.amount,
                need: amount,
            });
        }
        e.amount -= amount;
        self.credit(to, amount);
        Ok(())
    }

    /// Burns up to `amount` from an escrow; returns the amount burned.
    pub fn burn_escrow(&mut self, key: &str, amount: u64) -> Result<u64, LedgerError> {
        let e = self.escrow_mut(key)?;
        let taken = amount.min(e.amount);
        e.amount -= taken;
        self.burned += taken;
        Ok(taken)
    }

    /// Refunds whatever remains to the owner and removes the escrow.
    pub fn close_escrow(&mut self, key: &str) -> Result<u64, LedgerError> {
        let e = self
            .escrows
            .remove(key)
            .ok_or_else(|| LedgerError::UnknownEscrow(key.to_string()))?;
        self.credit(&e.owner, e.amount);
        Ok(e.amount)
    }

    /// Mints a reference reward.
    pub fn mint_reward(&mut self, referrer: Digest, target: Digest, recipient: UserId, amount: u64, interval: u64) {
        self.minted += amount;
        self.credit(&recipient, amount);
        self.push_record(RewardRecord {
            referrer,
            target,
            recipient,
            amount,
            interval,
            revoked: false,
        });
    }

    fn push_record(&mut self, r: RewardRecord) {
        let i = self.rewards.len();
        self.by_node.entry(r.referrer).or_default().push(i);
        if r.target != r.referrer {
            self.by_node.entry(r.target).or_default().push(i);
        }
        self.rewards.push(r);
    }

    /// Reverses every live payment where `node` is the referrer or the
    /// target. Tokens are burned from recipients up to their balance.
    /// Returns the amount burned.
    pub fn revoke_node(&mut self, node: &Digest) -> u64 {
        let Some(idx) = self.by_node.get(node).cloned() else {
            return 0;
        };
        let mut burned = 0;
        for i in idx {
            if self.rewards[i].revoked {
                continue;
            }
            self.rewards[i].revoked = true;
            let (user, amount) = (self.rewards[i].recipient, self.rewards[i].amount);
            let taken = self.burn_balance(&user, amount);
            if taken < amount {
                *self.shortfall.entry(user).or_insert(0) += amount - taken;
            }
            burned += taken;
        }
        burned
    }

    pub fn rewards(&self) -> &[RewardRecord] {
        &self.rewards
    }

    /// Live (unrevoked) reward total per recipient.
    pub fn reward_totals(&self) -> BTreeMap<UserId, u64> {
        let mut out = BTreeMap::new();
        for r in self.rewards.iter().filter(|r| !r.revoked) {
            *out.entry(r.recipient).or_insert(0) += r.amount;
        }
        out
    }

    pub fn reward_total(&self, user: &UserId) -> u64 {
        self.rewards
            .iter()
            .filter(|r| !r.revoked && r.recipient == *user)
            .map(|r| r.amount)
            .sum()
    }

    pub fn shortfall(&self) -> &BTreeMap<UserId, u64> {
        &self.shortfall
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, Keypair};

    fn u(i: u32) -> UserId {
        Keypair::derive(0, i).id()
    }

    #[test]
    fn test_escrow_lifecycle_conserves() {
        let mut l = Ledger::new();
        l.fund(u(0), 100);
        l.open_escrow("task/1", &u(0), 60).unwrap();
        assert_eq!(l.balance(&u(0)), 40);
        l.release("task/1", &u(1), 25).unwrap();
        assert_eq!(l.burn_escrow("task/1", 5).unwrap(), 5);
        assert_eq!(l.close_escrow("task/1").unwrap(), 30);
        assert_eq!(l.balance(&u(0)), 70);
        assert_eq!(l.balance(&u(1)), 25);
        assert!(l.conservation_holds());
        assert!(matches!(
            l.open_escrow("x", &u(1), 26),
            Err(LedgerError::InsufficientBalance { .. })
        ));
    }

    #[test]
    fn test_revoke_burns_and_records_shortfall() {
        let mut l = Ledger::new();
        let (a, b) = (hash(b"a"), hash(b"b"));
        l.mint_reward(b, a, u(1), 3, 0);
        l.mint_reward(a, b, u(2), 2, 0);
        l.transfer(&u(2), &u(3), 1).unwrap();
        assert_eq!(l.reward_total(&u(1)), 3);
        let burned = l.revoke_node(&a);
        assert_eq!(burned, 4);
        assert_eq!(l.shortfall()[&u(2)], 1);
        assert_eq!(l.reward_total(&u(1)), 0);
        assert_eq!(l.revoke_node(&a), 0);
        assert!(l.conservation_holds());
    }
}
