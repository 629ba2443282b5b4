//! Synchronous, asynchronous and block-mined baselines on the same world.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::AdversaryKind;
use crate::baselines::{async_update, block_round, sync_round, BaselineKind, Miner, TimedUpdate};
use crate::model::{evaluate, train, ModelError, ModelWeights};
use crate::sim::config::ExperimentConfig;
use crate::sim::events::{EventKind, EventQueue};
use crate::sim::metrics::{MetricsLog, MetricsRow, PolSummary, RunnerSummary, Summary};
use crate::sim::profile::{charge_time, Work};
use crate::sim::world::{median, sub_seed, World};
use crate::sim::{backdoor_rate, RunOutput, SimError};

struct State<'a> {
    cfg: &'a ExperimentConfig,
    kind: BaselineKind,
    world: World,
    global: ModelWeights,
    best: f64,
    current: f64,
    genesis_accuracy: f64,
    cycles: Vec<u64>,
    published: Vec<u64>,
    rewards: Vec<u64>,
    last_local: Vec<Option<ModelWeights>>,
    cycle_ticks: (u64, u64),
    rounds: u64,
    metrics: MetricsLog,
}

pub fn run(cfg: &ExperimentConfig, world: World, kind: BaselineKind) -> Result<RunOutput, SimError> {
    let n = world.runners.len();
    let acc = evaluate(&world.net, &world.genesis, &world.test);
    let mut s = State {
        cfg,
        kind,
        global: world.genesis.clone(),
        world,
        best: acc,
        current: acc,
        genesis_accuracy: acc,
        cycles: vec![0; n],
        published: vec![0; n],
        rewards: vec![0; n],
        last_local: vec![None; n],
        cycle_ticks: (0, 0),
        rounds: 0,
        metrics: MetricsLog::new(),
    };
    if cfg.experiment.iterations > 0 {
        match kind {
            BaselineKind::Async => s.run_async()?,
            BaselineKind::GoogleSync | BaselineKind::Block => s.run_rounds()?,
        }
    }
    Ok(s.finish())
}

/// What one runner contributes from `start`, and how long it takes.
enum Contribution {
    Update(ModelWeights, u64),
    Nothing,
}

impl State<'_> {
    fn row(&mut self, tick: u64) {
        if self.metrics.last().is_some_and(|r| r.tick >= tick) {
            return;
        }
        let mut by_kind = BTreeMap::new();
        for r in &self.world.runners {
            *by_kind.entry(r.kind).or_insert(0) += self.rewards[r.index];
        }
        let mut row = MetricsRow {
            tick,
            framework: self.kind.tag().into(),
            best_accuracy: self.best,
            current_accuracy: self.current,
            total_rewards: 0,
            reward_normal: 0,
            reward_poisoning: 0,
            reward_backdoor: 0,
            reward_stealing: 0,
            reward_colluding: 0,
            reward_lazy: 0,
            node_count: 0,
            open_challenges: 0,
            invalidated: 0,
            mean_cycle_ticks: if self.cycle_ticks.1 == 0 {
                0.0
            } else {
                self.cycle_ticks.0 as f64 / self.cycle_ticks.1 as f64
            },
        };
        row.set_rewards(&by_kind);
        self.metrics.push(row);
    }

    fn set_global(&mut self, w: ModelWeights) {
        self.current = evaluate(&self.world.net, &w, &self.world.test);
        self.best = self.best.max(self.current);
        self.global = w;
    }

    /// Download the global model, then train, copy or replay, then upload.
    fn contribute(&mut self, r: usize, start: &ModelWeights) -> Result<Contribution, SimError> {
        let bytes = self.world.model_bytes;
        let cfg = self.cfg;
        let runner = &mut self.world.runners[r];
        if runner.rng.gen::<f64>() < runner.profile.idle_probability {
            return Ok(Contribution::Nothing);
        }
        let p = &runner.profile;
        let c = &cfg.costs;
        let transfer = 2 * charge_time(p, c, Work::Transfer { bytes });
        let attack = runner.kind != AdversaryKind::Normal && runner.rng.gen::<f64>() < cfg.adversary.attack_probability;
        match (runner.kind, attack, &self.last_local[r]) {
            (AdversaryKind::Stealing, true, _) => return Ok(Contribution::Update(start.clone(), transfer.max(1))),
            (AdversaryKind::Lazy, true, Some(prev)) => return Ok(Contribution::Update(prev.clone(), transfer.max(1))),
            _ => {}
        }
        let settings = cfg.training_settings().with_seed(runner.rng.gen());
        let cost = transfer
            + charge_time(
                p,
                c,
                Work::Train {
                    epochs: settings.epochs,
                    samples: runner.train.len(),
                },
            );
        match train(&self.world.net, start, &settings, &runner.train) {
            Ok(w) => {
                self.last_local[r] = Some(w.clone());
                Ok(Contribution::Update(w, cost.max(1)))
            }
            Err(ModelError::NonFiniteLoss { .. } | ModelError::NonFiniteWeights(_)) => Ok(Contribution::Nothing),
            Err(e) => Err(e.into()),
        }
    }

    fn run_rounds(&mut self) -> Result<(), SimError> {
        let b = &self.cfg.baseline;
        let timeout = b.timeout;
        let miners: Vec<Miner> = (0..b.miners).map(|id| Miner { id, hash_rate: 1.0 }).collect();
        let mut mine_rng = ChaCha8Rng::seed_from_u64(sub_seed(self.cfg.experiment.seed, "mining", 0));
        let mut t0 = 0u64;
        self.row(0);
        for _ in 0..self.cfg.experiment.iterations {
            let deadline = t0 + timeout;
            let start = self.global.clone();
            let mut updates = Vec::new();
            for r in 0..self.world.runners.len() {
                if let Contribution::Update(w, cost) = self.contribute(r, &start)? {
                    self.cycles[r] += 1;
                    self.cycle_ticks.0 += cost;
                    self.cycle_ticks.1 += 1;
                    updates.push(TimedUpdate {
                        worker: r,
                        weights: w,
                        arrival: t0 + cost,
                    });
                }
            }
            for u in updates.iter().filter(|u| u.arrival <= deadline) {
                self.published[u.worker] += 1;
            }
            let end = match self.kind {
                BaselineKind::Block => {
                    let block = block_round(&miners, &updates, deadline, b.difficulty, &mut mine_rng)?.expect("miners configured");
                    for w in &block.included {
                        self.rewards[*w] += 1;
                    }
                    if let Some(w) = block.weights {
                        self.set_global(w);
                    }
                    deadline + block.search_ticks
                }
                _ => {
                    if let Some(w) = sync_round(&updates, deadline)? {
                        self.set_global(w);
                    }
                    deadline
                }
            };
            let cap = self.cfg.experiment.max_ticks;
            if cap > 0 && end > cap {
                break;
            }
            self.row(end);
            self.rounds += 1;
            t0 = end;
        }
        Ok(())
    }

    fn run_async(&mut self) -> Result<(), SimError> {
        let n = self.world.runners.len();
        let mut queue = EventQueue::new();
        let mut pending: Vec<Option<(ModelWeights, u64)>> = vec![None; n];
        for r in 0..n {
            queue.schedule(0, EventKind::Gmue { runner: r })?;
        }
        let mix = self.cfg.baseline.async_mix;
        let cap = self.cfg.experiment.max_ticks;
        let mut stopping = false;
        let mut last = 0;
        self.row(0);
        while let Some(ev) = queue.next_event() {
            if cap > 0 && ev.tick > cap {
                break;
            }
            if ev.tick > last {
                self.row(last);
                last = ev.tick;
            }
            match ev.kind {
                EventKind::Gmue { runner } if !stopping => {
                    let start = self.global.clone();
                    match self.contribute(runner, &start)? {
                        Contribution::Update(w, cost) => {
                            pending[runner] = Some((w, ev.tick));
                            queue.schedule(ev.tick + cost, EventKind::Lmue { runner })?;
                        }
                        Contribution::Nothing => queue.schedule(ev.tick + 1, EventKind::Gmue { runner })?,
                    }
                }
                EventKind::Lmue { runner } => {
                    if let Some((w, started)) = pending[runner].take() {
                        let merged = async_update(&self.global, &w, mix)?;
                        self.set_global(merged);
                        self.published[runner] += 1;
                        self.cycles[runner] += 1;
                        self.cycle_ticks.0 += ev.tick - started;
                        self.cycle_ticks.1 += 1;
                    }
                    if median(self.cycles.iter().copied()) >= self.cfg.experiment.iterations {
                        stopping = true;
                    }
                    queue.schedule(ev.tick, EventKind::Gmue { runner })?;
                }
                _ => {}
            }
        }
        self.row(last);
        Ok(())
    }

    fn finish(self) -> RunOutput {
        let mut by_kind = BTreeMap::new();
        let runners: Vec<RunnerSummary> = self
            .world
            .runners
            .iter()
            .map(|r| {
                *by_kind.entry(r.kind).or_insert(0) += self.rewards[r.index];
                RunnerSummary {
                    index: r.index,
                    kind: r.kind,
                    cpu: r.profile.cpu,
                    bandwidth: r.profile.bandwidth,
                    memory: r.profile.memory,
                    cycles: self.cycles[r.index],
                    published: self.published[r.index],
                    rewards: self.rewards[r.index],
                    balance: self.rewards[r.index],
                }
            })
            .collect();
        let backdoor_success = self
            .world
            .runners
            .iter()
            .any(|r| r.kind == AdversaryKind::Backdoor)
            .then(|| backdoor_rate(self.cfg, &self.world, &self.global));
        let iterations = match self.kind {
            BaselineKind::Async => median(self.cycles.iter().copied()),
            _ => self.rounds,
        };
        let summary = Summary {
            framework: self.kind.tag().into(),
            seed: self.cfg.experiment.seed,
            iterations,
            end_tick: self.metrics.last().map_or(0, |r| r.tick),
            final_accuracy: self.metrics.final_accuracy(),
            best_accuracy: self.metrics.best_accuracy(),
            genesis_accuracy: self.genesis_accuracy,
            runners,
            rewards_by_kind: by_kind,
            pol: PolSummary::default(),
            settlements: 0,
            conservation_ok: true,
            chain_ok: true,
            task_finalized: false,
            backdoor_success,
            invariant_failures: Vec::new(),
        };
        RunOutput {
            config: self.cfg.clone(),
            metrics: self.metrics,
            summary,
            dag: None,
            chain: Vec::new(),
            calibration: None,
        }
    }
}
