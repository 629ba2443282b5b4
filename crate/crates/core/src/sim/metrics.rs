//! Per-tick metrics rows and the run summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub tick: u64,
    pub framework: String,
    /// Running maximum of published-model test accuracy.
    pub best_accuracy: f64,
    /// Test accuracy of the model a newcomer would use right now.
    pub current_accuracy: f64,
    pub total_rewards: u64,
    pub reward_normal: u64,
    pub reward_poisoning: u64,
    pub reward_backdoor: u64,
    pub reward_stealing: u64,
    pub reward_colluding: u64,
    pub reward_lazy: u64,
    pub node_count: usize,
    pub open_challenges: usize,
    pub invalidated: usize,
    /// Mean ticks from cycle start to publication so far.
    pub mean_cycle_ticks: f64,
}

impl MetricsRow {
    pub fn set_rewards(&mut self, by_kind: &BTreeMap<AdversaryKind, u64>) {
        let get = |k| by_kind.get(&k).copied().unwrap_or(0);
        self.reward_normal = get(AdversaryKind::Normal);
        self.reward_poisoning = get(AdversaryKind::Poisoning);
        self.reward_backdoor = get(AdversaryKind::Backdoor);
        self.reward_stealing = get(AdversaryKind::Stealing);
        self.reward_colluding = get(AdversaryKind::Colluding);
        self.reward_lazy = get(AdversaryKind::Lazy);
        self.total_rewards = by_kind.values().sum();
    }
}

/// Append-only; one row per completed tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `row`, first repeating the previous row for any skipped
    /// ticks so the log stays dense.
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last().cloned() {
            assert!(row.tick > last.tick, "metrics rows must advance");
            for t in last.tick + 1..row.tick {
                self.rows.push(MetricsRow { tick: t, ..last.clone() });
            }
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Mean `current_accuracy` over the last 10% of rows.
    pub fn final_accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let k = (self.rows.len() / 10).max(1);
        let tail = &self.rows[self.rows.len() - k..];
        tail.iter().map(|r| r.current_accuracy).sum::<f64>() / k as f64
    }

    pub fn best_accuracy(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.best_accuracy)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER).expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(bytes);
        let rows = r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
        Ok(Self { rows })
    }
}

const CSV_HEADER: [&str; 15] = [
    "tick",
    "framework",
    "best_accuracy",
    "current_accuracy",
    "total_rewards",
    "reward_normal",
    "reward_poisoning",
    "reward_backdoor",
    "reward_stealing",
    "reward_colluding",
    "reward_lazy",
    "node_count",
    "open_challenges",
    "invalidated",
    "mean_cycle_ticks",
];

/// Per-runner end-of-run figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerSummary {
    pub index: usize,
    pub kind: AdversaryKind,
    pub cpu: f64,
    pub bandwidth: f64,
    pub memory: usize,
    pub cycles: u64,
    pub published: u64,
    pub rewards: u64,
    pub balance: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolSummary {
    pub epsilon: f64,
    pub challenges: usize,
    pub proved: usize,
    pub invalidated: usize,
    pub timeouts: usize,
    /// Invalidations of nodes by normal runners.
    pub honest_invalidated: usize,
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub framework: String,
    pub seed: u64,
    pub iterations: u64,
    pub end_tick: u64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub genesis_accuracy: f64,
    pub runners: Vec<RunnerSummary>,
    pub rewards_by_kind: BTreeMap<AdversaryKind, u64>,
    pub pol: PolSummary,
    pub settlements: usize,
    pub conservation_ok: bool,
    pub chain_ok: bool,
    pub task_finalized: bool,
    /// Backdoor attack success rate on triggered test samples.
    pub backdoor_success: Option<f64>,
    pub invariant_failures: Vec<String>,
}

impl Summary {
    pub fn invariants_hold(&self) -> bool {
        self.invariant_failures.is_empty()
    }
}
