//! Runner resource profiles and the work-to-ticks cost model.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerProfile {
    /// Training-speed multiplier.
    pub cpu: f64,
    /// Weight bytes moved per tick.
    pub bandwidth: f64,
    /// Candidate models held at once.
    pub memory: usize,
    pub idle_probability: f64,
}

impl Default for RunnerProfile {
    fn default() -> Self {
        Self {
            cpu: 1.0,
            bandwidth: 50_000.0,
            memory: 6,
            idle_probability: 0.1,
        }
    }
}

impl RunnerProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cpu > 0.0 && self.cpu.is_finite()) {
            return Err(format!("cpu must be positive, got {}", self.cpu));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if self.memory == 0 {
            return Err("memory must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.idle_probability) {
            return Err(format!("idle probability {} outside [0, 1]", self.idle_probability));
        }
        Ok(())
    }
}

/// Base costs in ticks at `cpu = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per sample per epoch.
    pub train: f64,
    /// Per evaluated sample.
    pub evaluate: f64,
    /// Per extra candidate batch when memory is smaller than the batch.
    pub swap: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            train: 0.02,
            evaluate: 0.005,
            swap: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Work {
    Train {
        epochs: u32,
        samples: usize,
    },
    Transfer {
        bytes: usize,
    },
    Evaluate {
        samples: usize,
    },
    /// Reloading between candidate batches.
    Swap {
        batches: usize,
    },
}

pub fn charge_time(profile: &RunnerProfile, costs: &CostModel, work: Work) -> u64 {
    let ticks = match work {
        Work::Train { epochs, samples } => costs.train * epochs as f64 * samples as f64 / profile.cpu,
        Work::Transfer { bytes } => bytes as f64 / profile.bandwidth,
        Work::Evaluate { samples } => costs.evaluate * samples as f64 / profile.cpu,
        Work::Swap { batches } => costs.swap * batches.saturating_sub(1) as f64 / profile.cpu,
    };
    // Guard against 2.0000000001-style float noise turning into an extra tick.
    (ticks - 1e-9).ceil().max(0.0) as u64
}
