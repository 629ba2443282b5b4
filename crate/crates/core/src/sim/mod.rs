//! Discrete-event simulator: one run of the DAG framework or a baseline
//! over a shared world of heterogeneous runners.

mod baseline_run;
pub mod config;
mod dag_run;
pub mod events;
pub mod metrics;
pub mod profile;
pub mod world;

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::adversary::{triggered_copy, AdversaryError};
use crate::crypto::{hash, Digest};
use crate::dag::{export_edges_csv, export_jsonl, Dag, DagError};
use crate::dataset::DatasetError;
use crate::model::{ModelError, ModelWeights};
use crate::pol::{Calibration, PolError};
use crate::settlement::{SettlementError, SettlementRecord};
use crate::task::TaskError;
use crate::worker::WorkerError;

pub use config::{ConfigError, ExperimentConfig, Framework};
pub use events::{Event, EventKind, EventQueue, PastEvent};
pub use metrics::{MetricsLog, MetricsRow, PolSummary, RunnerSummary, Summary};
pub use profile::{charge_time, CostModel, RunnerProfile, Work};
pub use world::{build_world, median, sub_seed, Runner, World};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Settlement(#[from] SettlementError),
    #[error(transparent)]
    Pol(#[from] PolError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Worker(#[from] WorkerError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Schedule(#[from] PastEvent),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Calibration could not separate honest from falsified replays.
    pub fn is_inseparable(&self) -> bool {
        matches!(self, SimError::Pol(PolError::Inseparable { .. }))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub metrics: MetricsLog,
    pub summary: Summary,
    /// Only the DAG framework keeps a graph.
    pub dag: Option<Dag>,
    pub chain: Vec<SettlementRecord>,
    pub calibration: Option<Calibration>,
}

impl RunOutput {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    pub fn dag_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        if let Some(d) = &self.dag {
            export_jsonl(d, &mut out).expect("in-memory write");
        }
        out
    }

    pub fn chain_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.chain {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        out
    }

    /// Hash over every exported artifact; equal seeds and configs must
    /// give equal fingerprints.
    pub fn fingerprint(&self) -> Digest {
        let mut all = self.metrics.to_csv();
        all.extend(self.summary_json().as_bytes());
        all.extend(self.dag_jsonl());
        all.extend(self.chain_jsonl());
        hash(&all)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), self.metrics.to_csv())?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        fs::write(dir.join("config.ini"), self.config.to_ini())?;
        fs::write(dir.join("dag.jsonl"), self.dag_jsonl())?;
        let mut edges = Vec::new();
        match &self.dag {
            Some(d) => export_edges_csv(d, &mut edges)?,
            None => export_edges_csv(&Dag::new(), &mut edges)?,
        }
        fs::write(dir.join("dag_edges.csv"), edges)?;
        fs::write(dir.join("settlement_chain.jsonl"), self.chain_jsonl())?;
        if let Some(c) = &self.calibration {
            let mut f = fs::File::create(dir.join("calibration.json"))?;
            serde_json::to_writer_pretty(&mut f, c)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    match cfg.experiment.framework {
        Framework::Dag => dag_run::run(cfg, world),
        Framework::Baseline(kind) => baseline_run::run(cfg, world, kind),
    }
}

/// Epsilon calibration on the run's world, without running the loop.
pub fn calibrate_pol(cfg: &ExperimentConfig) -> Result<Calibration, SimError> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    dag_run::calibrate(cfg, &world)
}

/// Share of triggered test samples (true label other than the target) that
/// the model assigns to the backdoor target.
pub fn backdoor_rate(cfg: &ExperimentConfig, world: &World, w: &ModelWeights) -> f64 {
    let target = cfg.adversary.backdoor_target;
    let keep: Vec<usize> = (0..world.test.len()).filter(|&i| world.test.label(i) != target).collect();
    let base = world.test.subset(&keep);
    let peak = world.test.raw_features().iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let Ok(triggered) = triggered_copy(&base, cfg.adversary.backdoor_patch, peak) else {
        return 0.0;
    };
    if triggered.is_empty() {
        return 0.0;
    }
    let hits = (0..triggered.len())
        .filter(|&i| world.net.predict(w, triggered.features(i)) == target)
        .count();
    hits as f64 / triggered.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pairs: &[(&str, &str)]) -> ExperimentConfig {
        ExperimentConfig::default()
            .with_overrides([("runners.count", "8"), ("iterations", "4"), ("pol.calibration_trials", "12")])
            .unwrap()
            .with_overrides(pairs.iter().copied())
            .unwrap()
    }

    #[test]
    fn test_zero_iterations_exports_cleanly() {
        let out = run_experiment(&small(&[("iterations", "0")])).unwrap();
        assert!(out.metrics.is_empty());
        assert!(out.summary.invariants_hold());
        assert_eq!(out.dag.as_ref().unwrap().len(), 1);
        let tmp = tempfile::tempdir().unwrap();
        out.write(tmp.path()).unwrap();
        let csv = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn test_same_seed_same_fingerprint() {
        let cfg = small(&[("pol.audit_fraction", "0.5")]);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = run_experiment(&cfg.with_overrides([("seed", "43")]).unwrap()).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert!(a.summary.invariants_hold(), "{:?}", a.summary.invariant_failures);
        assert!(a.summary.settlements > 0);
    }

    #[test]
    fn test_task_mode_finalizes() {
        let cfg = small(&[("task.enabled", "true"), ("task.target_accuracy", "0.5"), ("iterations", "30")]);
        let out = run_experiment(&cfg).unwrap();
        assert!(out.summary.task_finalized);
        assert!(out.summary.invariants_hold(), "{:?}", out.summary.invariant_failures);
        let collected: usize = out.chain.iter().map(|r| r.collected_terminations.len()).sum();
        assert_eq!(collected, 1);
    }

    #[test]
    fn test_huge_noise_is_inseparable() {
        let err = calibrate_pol(&small(&[("pol.noise_std", "5")])).unwrap_err();
        assert!(err.is_inseparable(), "{err}");
    }

    #[test]
    fn test_baselines_run() {
        for fw in ["google", "async", "block"] {
            let out = run_experiment(&small(&[("framework", fw)])).unwrap();
            assert_eq!(out.summary.framework, fw);
            assert!(out.summary.iterations >= 4, "{fw}");
            assert!(out.metrics.best_accuracy() > out.summary.genesis_accuracy, "{fw}");
            assert!(out.dag.is_none() && out.chain.is_empty());
        }
    }
}
