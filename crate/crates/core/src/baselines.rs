//! Comparison frameworks: synchronous averaging with a timeout,
//! asynchronous mixing, and a mined-block variant of synchronous rounds.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{aggregate, ModelError, ModelWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    GoogleSync,
    Async,
    Block,
}

impl BaselineKind {
    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::GoogleSync => "google",
            BaselineKind::Async => "async",
            BaselineKind::Block => "block",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.tag())
    }
}

impl FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "google" | "google-sync" => Ok(BaselineKind::GoogleSync),
            "async" => Ok(BaselineKind::Async),
            "block" => Ok(BaselineKind::Block),
            other => Err(format!("unknown baseline {other:?}")),
        }
    }
}

/// A local model and the tick it reached the master.
#[derive(Debug, Clone)]
pub struct TimedUpdate {
    pub worker: usize,
    pub weights: ModelWeights,
    pub arrival: u64,
}

/// Plain mean of the updates that arrived by `deadline`. `None` when none
/// did, in which case the round is skipped.
pub fn sync_round(updates: &[TimedUpdate], deadline: u64) -> Result<Option<ModelWeights>, ModelError> {
    let on_time: Vec<(&ModelWeights, f64)> = updates
        .iter()
        .filter(|u| u.arrival <= deadline)
        .map(|u| (&u.weights, 1.0))
        .collect();
    if on_time.is_empty() {
        return Ok(None);
    }
    aggregate(&on_time).map(Some)
}

/// `mix * global + (1 - mix) * local`. Order of arrival matters.
pub fn async_update(global: &ModelWeights, local: &ModelWeights, mix: f64) -> Result<ModelWeights, ModelError> {
    if mix <= 0.0 {
        return Ok(local.clone());
    }
    if mix >= 1.0 {
        return Ok(global.clone());
    }
    aggregate(&[(global, mix), (local, 1.0 - mix)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Miner {
    pub id: usize,
    /// Nonce attempts per tick.
    pub hash_rate: f64,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub weights: Option<ModelWeights>,
    pub winner: usize,
    /// Ticks the winner needed to find its nonce.
    pub search_ticks: u64,
    /// Workers whose updates made it into the block.
    pub included: Vec<usize>,
}

/// Number of Bernoulli(p) trials up to the first success.
fn geometric<R: Rng>(p: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    ((u.ln() / (1.0 - p).ln()).floor() as u64).saturating_add(1)
}

/// One mined round. Each miner needs a geometric number of ticks with
/// success chance `hash_rate / difficulty` per tick; the earliest wins and
/// ties are broken uniformly. The block carries the synchronous average.
pub fn block_round<R: Rng>(
    miners: &[Miner],
    updates: &[TimedUpdate],
    deadline: u64,
    difficulty: f64,
    rng: &mut R,
) -> Result<Option<Block>, ModelError> {
    if miners.is_empty() {
        return Ok(None);
    }
    let times: Vec<u64> = miners
        .iter()
        .map(|m| {
            let p = (m.hash_rate / difficulty).clamp(1e-12, 1.0);
            if p >= 1.0 {
                1
            } else {
                geometric(p, rng)
            }
        })
        .collect();
    let best = *times.iter().min().expect("non-empty");
    let tied: Vec<usize> = (0..miners.len()).filter(|&i| times[i] == best).collect();
    let pick = tied[rng.gen_range(0..tied.len())];
    Ok(Some(Block {
        weights: sync_round(updates, deadline)?,
        winner: miners[pick].id,
        search_ticks: best,
        included: updates.iter().filter(|u| u.arrival <= deadline).map(|u| u.worker).collect(),
    }))
}
