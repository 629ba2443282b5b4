//! Event queue ordered by (tick, insertion order).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// A runner fetches the current global state and starts a cycle.
    Gmue {
        runner: usize,
    },
    /// A runner's local model lands.
    Lmue {
        runner: usize,
    },
    SettlementDue {
        interval: u64,
    },
    /// Decide whether to challenge a freshly published node.
    PolChallenge {
        target: Digest,
    },
    /// The challenged author's proof upload finishes.
    PolProof {
        challenge: Digest,
    },
    PolTimeout {
        challenge: Digest,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.tick, self.seq).cmp(&(other.tick, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot schedule at tick {tick}, clock is at {now}")]
pub struct PastEvent {
    pub tick: u64,
    pub now: u64,
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    now: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, tick: u64, kind: EventKind) -> Result<(), PastEvent> {
        if tick < self.now {
            return Err(PastEvent { tick, now: self.now });
        }
        self.heap.push(Reverse(Event {
            tick,
            seq: self.next_seq,
            kind,
        }));
        self.next_seq += 1;
        Ok(())
    }

    /// Pops the earliest event and advances the clock. `None` ends the run.
    pub fn next_event(&mut self) -> Option<Event> {
        let Reverse(e) = self.heap.pop()?;
        self.now = e.tick;
        Some(e)
    }

    pub fn peek_tick(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.tick)
    }
}
