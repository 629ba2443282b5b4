//! Experiment configuration: flat INI sections with dotted override keys.
//!
//! Keys outside any section belong to `[experiment]`. Every key must exist
//! in the default configuration; values are parsed by the default's type,
//! and lists are comma separated.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::adversary::AdversaryKind;
use crate::baselines::BaselineKind;
use crate::model::TrainingSettings;
use crate::pol::PolParams;
use crate::settlement::SettlementConfig;
use crate::sim::profile::{CostModel, RunnerProfile};
use crate::worker::WorkerPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: unknown key")]
    UnknownKey { path: String },
    #[error("{path}: cannot parse {value:?} ({why})")]
    BadValue { path: String, value: String, why: String },
    #[error("{path}: {why}")]
    Invalid { path: String, why: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config file: {0}")]
    Syntax(String),
}

fn invalid(path: &str, why: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        why: why.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Framework {
    Dag,
    Baseline(BaselineKind),
}

impl Framework {
    pub fn tag(self) -> &'static str {
        match self {
            Framework::Dag => "dag",
            Framework::Baseline(b) => b.tag(),
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Framework {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dag" | "ironforge" => Ok(Framework::Dag),
            other => other
                .parse()
                .map(Framework::Baseline)
                .map_err(|_| format!("unknown framework {other:?} (expected dag, ironforge, google, async or block)")),
        }
    }
}

impl TryFrom<String> for Framework {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Framework> for String {
    fn from(f: Framework) -> String {
        f.tag().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub framework: Framework,
    pub seed: u64,
    /// Median per-runner cycle count (rounds for synchronous baselines)
    /// after which no new work starts.
    pub iterations: u64,
    /// Hard tick cap; 0 disables it.
    pub max_ticks: u64,
    /// Empty means the default output root.
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// `digits`, `blobs`, or a CSV path (features then label).
    pub name: String,
    pub train_size: usize,
    pub test_size: usize,
    /// Per-runner local evaluation set drawn from the remaining pool.
    pub validation_size: usize,
    pub blob_samples: usize,
    pub blob_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnersSection {
    pub count: usize,
    /// Levels assigned round-robin by runner index.
    pub cpu: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub memory: Vec<usize>,
    pub idle_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub architecture: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerSection {
    pub beta: usize,
    pub sigma: usize,
    pub eta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettlementSection {
    pub delta: u64,
    pub committee_size: usize,
    pub reward_per_reference: u64,
    pub max_rounds: u32,
    pub initial_balance: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolSection {
    pub enabled: bool,
    pub deposit: u64,
    pub refund_fraction: f64,
    pub timeout_intervals: u64,
    pub noise_std: f64,
    /// 0 means calibrate at run start.
    pub epsilon: f64,
    /// Chance that a fresh node is challenged even without a duplicate.
    pub audit_fraction: f64,
    pub calibration_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    pub poisoning: f64,
    pub backdoor: f64,
    pub stealing: f64,
    pub colluding: f64,
    pub lazy: f64,
    pub attack_probability: f64,
    pub poison_sample_fraction: f64,
    pub backdoor_sample_fraction: f64,
    pub backdoor_target: u32,
    pub backdoor_patch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    /// Synchronous round length in ticks.
    pub timeout: u64,
    pub async_mix: f64,
    pub miners: usize,
    /// Expected nonce-search ticks for a unit-rate miner.
    pub difficulty: f64,
    pub block_reward: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub enabled: bool,
    pub target_accuracy: f64,
    pub prize: u64,
    pub contest: String,
    pub penalty: String,
    pub committee_size: usize,
    pub registration_deposit: u64,
    pub self_reference_threshold: f64,
    pub self_reference_fine: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSection,
    pub runners: RunnersSection,
    pub costs: CostModel,
    pub training: TrainingSection,
    pub worker: WorkerSection,
    pub settlement: SettlementSection,
    pub pol: PolSection,
    pub adversary: AdversarySection,
    pub baseline: BaselineSection,
    pub task: TaskSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection {
                framework: Framework::Dag,
                seed: 42,
                iterations: 200,
                max_ticks: 0,
                output_dir: String::new(),
            },
            dataset: DatasetSection {
                name: "digits".into(),
                train_size: 1200,
                test_size: 400,
                validation_size: 100,
                blob_samples: 2000,
                blob_spread: 0.35,
            },
            runners: RunnersSection {
                count: 12,
                cpu: vec![1.0],
                bandwidth: vec![50_000.0],
                memory: vec![6],
                idle_probability: 0.1,
            },
            costs: CostModel::default(),
            training: TrainingSection {
                epochs: 5,
                learning_rate: 0.1,
                batch_size: 10,
                architecture: "tanh-mlp".into(),
            },
            worker: WorkerSection {
                beta: 6,
                sigma: 5,
                eta: 30,
            },
            settlement: SettlementSection {
                delta: 20,
                committee_size: 7,
                reward_per_reference: 1,
                max_rounds: 5,
                initial_balance: 1000,
            },
            pol: PolSection {
                enabled: true,
                deposit: 2,
                refund_fraction: 0.5,
                timeout_intervals: 2,
                noise_std: 0.0001,
                epsilon: 0.0,
                audit_fraction: 0.1,
                calibration_trials: 30,
            },
            adversary: AdversarySection {
                poisoning: 0.0,
                backdoor: 0.0,
                stealing: 0.0,
                colluding: 0.0,
                lazy: 0.0,
                attack_probability: 1.0,
                poison_sample_fraction: 1.0,
                backdoor_sample_fraction: 0.5,
                backdoor_target: 0,
                backdoor_patch: 2,
            },
            baseline: BaselineSection {
                timeout: 25,
                async_mix: 0.5,
                miners: 5,
                difficulty: 4.0,
                block_reward: 5,
            },
            task: TaskSection {
                enabled: false,
                target_accuracy: 0.9,
                prize: 100,
                contest: "winner-traverse".into(),
                penalty: "self-reference".into(),
                committee_size: 3,
                registration_deposit: 10,
                self_reference_threshold: 0.5,
                self_reference_fine: 10,
            },
        }
    }
}

fn parse_scalar(template: &Value, raw: &str) -> Result<Value, String> {
    let raw = raw.trim();
    match template {
        Value::Bool(_) => raw.parse::<bool>().map(Value::Bool).map_err(|e| e.to_string()),
        Value::Number(n) if n.is_u64() => raw.parse::<u64>().map(Value::from).map_err(|e| e.to_string()),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
            serde_json::Number::from_f64(v)
                .map(Value::Number)
                .ok_or_else(|| "not a finite number".into())
        }
        _ => Ok(Value::String(raw.to_string())),
    }
}

fn parse_value(template: &Value, raw: &str) -> Result<Value, String> {
    match template {
        Value::Array(items) => {
            let proto = items.first().cloned().unwrap_or(Value::Null);
            raw.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_scalar(&proto, s))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        t => parse_scalar(t, raw),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// `key` alone means `experiment.key`.
fn full_path(key: &str) -> String {
    if key.contains('.') {
        key.to_string()
    } else {
        format!("experiment.{key}")
    }
}

impl ExperimentConfig {
    /// Applies `section.key = value` pairs over these values.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, ConfigError> {
        let mut root = serde_json::to_value(self).expect("config serializes");
        for (key, raw) in pairs {
            let path = full_path(key.trim());
            let (section, field) = path.split_once('.').expect("path has a dot");
            let slot = root
                .get_mut(section)
                .and_then(|s| s.get_mut(field))
                .ok_or_else(|| ConfigError::UnknownKey { path: path.clone() })?;
            *slot = parse_value(slot, raw).map_err(|why| ConfigError::BadValue {
                path: path.clone(),
                value: raw.to_string(),
                why,
            })?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(root).map_err(|e| ConfigError::BadValue {
            path: "config".into(),
            value: String::new(),
            why: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_ini_str(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut pairs = Vec::new();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => full_path(k),
                };
                pairs.push((key, v.to_string()));
            }
        }
        Self::default().with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_ini_str(&std::fs::read_to_string(path)?)
    }

    /// Full resolved configuration in the same INI layout.
    pub fn to_ini(&self) -> String {
        let root = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (section, fields) in root.as_object().expect("object") {
            out.push_str(&format!("[{section}]\n"));
            let fields: &Map<String, Value> = fields.as_object().expect("section object");
            for (k, v) in fields {
                out.push_str(&format!("{k} = {}\n", render(v)));
            }
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.runners;
        if r.count < 2 {
            return Err(invalid("runners.count", "need at least 2 runners"));
        }
        for (name, empty) in [
            ("cpu", r.cpu.is_empty()),
            ("bandwidth", r.bandwidth.is_empty()),
            ("memory", r.memory.is_empty()),
        ] {
            if empty {
                return Err(invalid(&format!("runners.{name}"), "needs at least one level"));
            }
        }
        for i in 0..r.count {
            self.profile(i).validate().map_err(|why| invalid("runners", why))?;
        }
        let w = &self.worker;
        if !(1 <= w.sigma && w.sigma <= w.beta && w.beta <= w.eta) {
            return Err(invalid("worker", "need 1 <= sigma <= beta <= eta"));
        }
        self.training_settings()
            .validate()
            .map_err(|e| invalid("training", e.to_string()))?;
        if !matches!(self.training.architecture.as_str(), "mlp" | "tanh-mlp" | "cnn") {
            return Err(invalid("training.architecture", "expected mlp, tanh-mlp or cnn"));
        }
        let d = &self.dataset;
        if !d.train_size.is_multiple_of(2 * r.count) {
            return Err(invalid(
                "dataset.train_size",
                format!("must be a multiple of 2 * runners.count = {}", 2 * r.count),
            ));
        }
        if d.validation_size == 0 || d.test_size == 0 {
            return Err(invalid("dataset", "validation_size and test_size must be positive"));
        }
        let s = &self.settlement;
        if s.delta == 0 {
            return Err(invalid("settlement.delta", "must be positive"));
        }
        if s.committee_size == 0 || s.committee_size > r.count {
            return Err(invalid("settlement.committee_size", "must be between 1 and runners.count"));
        }
        let p = &self.pol;
        for (name, v) in [("pol.refund_fraction", p.refund_fraction), ("pol.audit_fraction", p.audit_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, "must lie in [0, 1]"));
            }
        }
        if !(p.noise_std >= 0.0 && p.epsilon >= 0.0) {
            return Err(invalid("pol", "noise_std and epsilon must be non-negative"));
        }
        if p.enabled && p.epsilon == 0.0 && p.calibration_trials < 10 {
            return Err(invalid("pol.calibration_trials", "need at least 10"));
        }
        let a = &self.adversary;
        let mut total = 0.0;
        for (name, v) in [
            ("poisoning", a.poisoning),
            ("backdoor", a.backdoor),
            ("stealing", a.stealing),
            ("colluding", a.colluding),
            ("lazy", a.lazy),
            ("attack_probability", a.attack_probability),
            ("poison_sample_fraction", a.poison_sample_fraction),
            ("backdoor_sample_fraction", a.backdoor_sample_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(&format!("adversary.{name}"), "must lie in [0, 1]"));
            }
        }
        total += a.poisoning + a.backdoor + a.stealing + a.colluding + a.lazy;
        if total > 1.0 + 1e-9 {
            return Err(invalid("adversary", "attacker fractions sum above 1"));
        }
        let b = &self.baseline;
        if b.timeout == 0 || b.miners == 0 || b.difficulty <= 0.0 || !(0.0..=1.0).contains(&b.async_mix) {
            return Err(invalid(
                "baseline",
                "timeout, miners and difficulty must be positive and async_mix in [0, 1]",
            ));
        }
        let t = &self.task;
        if t.enabled {
            if !(t.target_accuracy > 0.0 && t.target_accuracy <= 1.0) {
                return Err(invalid("task.target_accuracy", "must lie in (0, 1]"));
            }
            if t.committee_size == 0 || t.committee_size > r.count {
                return Err(invalid("task.committee_size", "must be between 1 and runners.count"));
            }
        }
        Ok(())
    }

    pub fn profile(&self, runner: usize) -> RunnerProfile {
        let r = &self.runners;
        RunnerProfile {
            cpu: r.cpu[runner % r.cpu.len()],
            bandwidth: r.bandwidth[runner % r.bandwidth.len()],
            memory: r.memory[runner % r.memory.len()],
            idle_probability: r.idle_probability,
        }
    }

    /// Behavior per runner: attackers take the highest indices, in the
    /// order poisoning, backdoor, stealing, colluding, lazy.
    pub fn roles(&self) -> Vec<AdversaryKind> {
        let n = self.runners.count;
        let a = &self.adversary;
        let mut roles = vec![AdversaryKind::Normal; n];
        let mut next = n;
        for (kind, frac) in [
            (AdversaryKind::Poisoning, a.poisoning),
            (AdversaryKind::Backdoor, a.backdoor),
            (AdversaryKind::Stealing, a.stealing),
            (AdversaryKind::Colluding, a.colluding),
            (AdversaryKind::Lazy, a.lazy),
        ] {
            let count = (frac * n as f64).round() as usize;
            for _ in 0..count.min(next) {
                next -= 1;
                roles[next] = kind;
            }
        }
        roles
    }

    pub fn training_settings(&self) -> TrainingSettings {
        let t = &self.training;
        TrainingSettings::sgd(t.epochs, t.learning_rate, t.batch_size, 0)
    }

    pub fn worker_policy(&self, runner: usize) -> WorkerPolicy {
        WorkerPolicy {
            beta: self.worker.beta,
            sigma: self.worker.sigma,
            eta: self.worker.eta,
            idle_probability: self.runners.idle_probability,
            shards: vec![runner],
            architecture: self.training.architecture.clone(),
        }
    }

    pub fn pol_params(&self) -> PolParams {
        let p = &self.pol;
        PolParams {
            deposit: p.deposit,
            refund_fraction: p.refund_fraction,
            timeout_intervals: p.timeout_intervals,
            noise_std: p.noise_std,
            epsilon: p.epsilon,
        }
    }

    pub fn settlement_config(&self, epsilon: f64) -> SettlementConfig {
        let s = &self.settlement;
        SettlementConfig {
            delta: s.delta,
            committee_size: s.committee_size,
            reward_per_reference: if self.task.enabled { 0 } else { s.reward_per_reference },
            max_rounds: s.max_rounds,
            pol: PolParams {
                epsilon,
                ..self.pol_params()
            },
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        if !self.experiment.output_dir.is_empty() {
            return PathBuf::from(&self.experiment.output_dir);
        }
        let root = std::env::var("DAGFED_OUT").unwrap_or_else(|_| "out".into());
        PathBuf::from(root).join(format!("{}-{}", self.experiment.framework, self.experiment.seed))
    }
}
