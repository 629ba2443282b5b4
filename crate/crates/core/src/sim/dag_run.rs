//! Event loop for the DAG framework.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{collude_node, lazy_node, steal_node, AdversaryKind};
use crate::crypto::{Digest, UserId};
use crate::dag::{verify_incoming, Admission, Dag, DagNode, Membership, NodeDraft, NodeKind, OpenMembership, Payload};
use crate::ledger::Ledger;
use crate::model::{aggregate, evaluate, train, ModelError, ModelWeights};
use crate::pol::{calibrate_epsilon, raise_challenge, respond, Calibration, InvalidationReason, PolBook, PolChallenge, Replayer};
use crate::settlement::{audit_chain, Faults, Penalty, Settler};
use crate::sim::config::ExperimentConfig;
use crate::sim::events::{EventKind, EventQueue};
use crate::sim::metrics::{MetricsLog, MetricsRow, PolSummary, RunnerSummary, Summary};
use crate::sim::profile::{charge_time, Work};
use crate::sim::world::{median, sub_seed, Runner, World};
use crate::sim::{backdoor_rate, RunOutput, SimError};
use crate::store::{BlobStore, MemoryStore};
use crate::task::{finalize_task, monitor_step, publish_task, register_worker, SelfReference, StrategyRegistry, Task, TaskSpec};
use crate::worker::{collect_candidates, load_weights, produce_update, recent_pool, select_sources, WorkerError};

struct TaskRun {
    task: Task,
    registry: StrategyRegistry,
    penalties: Vec<Penalty>,
}

struct Sim<'a> {
    cfg: &'a ExperimentConfig,
    world: World,
    dag: Dag,
    store: MemoryStore,
    settler: Settler,
    book: PolBook,
    replay_cache: HashMap<(Digest, Digest), Result<f64, InvalidationReason>>,
    queue: EventQueue,
    pending: Vec<Option<(DagNode, u64)>>,
    cycles: Vec<u64>,
    published: Vec<Vec<Digest>>,
    /// First node seen per weight commit.
    first_commit: HashMap<Digest, Digest>,
    duplicates: HashSet<Digest>,
    /// Test accuracy per weight commit.
    test_acc: HashMap<Digest, f64>,
    /// Observer validation accuracy per weight commit.
    observer_acc: HashMap<Digest, f64>,
    best_accuracy: f64,
    current_accuracy: f64,
    genesis_accuracy: f64,
    rewards_by_kind: BTreeMap<AdversaryKind, u64>,
    cycle_ticks: (u64, u64),
    stopping: bool,
    audit_rng: ChaCha8Rng,
    timeouts: usize,
    task: Option<TaskRun>,
    metrics: MetricsLog,
    last_row_tick: Option<u64>,
}

pub fn run(cfg: &ExperimentConfig, world: World) -> Result<RunOutput, SimError> {
    let seed = cfg.experiment.seed;
    let mut store = MemoryStore::new();
    let mut dag = Dag::new();
    let mut ledger = Ledger::new();
    for r in &world.runners {
        ledger.fund(r.key.id(), cfg.settlement.initial_balance);
    }
    let genesis_commit = store.put(&world.genesis.to_bytes())?;
    let task = if cfg.task.enabled {
        let t = &cfg.task;
        ledger.fund(world.operator_key().id(), t.prize);
        let spec = TaskSpec {
            task_id: 1,
            target_accuracy: t.target_accuracy,
            prize: t.prize,
            contest: t.contest.clone(),
            penalty: t.penalty.clone(),
            committee_size: t.committee_size,
        };
        let mut task = publish_task(
            world.operator_key(),
            &world.keys,
            &mut ledger,
            &mut dag,
            &mut store,
            &world.genesis,
            &world.test,
            &spec,
            0,
        )?;
        for r in &world.runners {
            register_worker(&mut task, &mut ledger, &r.key.id(), t.registration_deposit)?;
        }
        let registry = StrategyRegistry::with_builtins(SelfReference {
            threshold: t.self_reference_threshold,
            base_fine: t.self_reference_fine,
        });
        registry.contest(&t.contest)?;
        registry.penalty(&t.penalty)?;
        Some(TaskRun {
            task,
            registry,
            penalties: Vec::new(),
        })
    } else {
        let mut g = NodeDraft::bare(world.operator_key().id(), NodeKind::Genesis, vec![], 0, Payload::None);
        g.weight_commit = genesis_commit;
        g.weight_uri = crate::store::uri_for(&genesis_commit);
        dag.append_node(g.sign(world.operator_key()))?;
        None
    };

    let calibration = if cfg.pol.enabled && cfg.pol.epsilon == 0.0 {
        Some(calibrate(cfg, &world)?)
    } else {
        None
    };
    let epsilon = calibration.as_ref().map_or(cfg.pol.epsilon, |c| c.epsilon);
    let n = world.runners.len();
    let genesis_accuracy = evaluate(&world.net, &world.genesis, &world.test);
    let mut sim = Sim {
        cfg,
        settler: Settler::new(cfg.settlement_config(epsilon), ledger),
        world,
        dag,
        store,
        book: PolBook::new(),
        replay_cache: HashMap::new(),
        queue: EventQueue::new(),
        pending: vec![None; n],
        cycles: vec![0; n],
        published: vec![Vec::new(); n],
        first_commit: HashMap::new(),
        duplicates: HashSet::new(),
        test_acc: HashMap::new(),
        observer_acc: HashMap::new(),
        best_accuracy: genesis_accuracy,
        current_accuracy: genesis_accuracy,
        genesis_accuracy,
        rewards_by_kind: BTreeMap::new(),
        cycle_ticks: (0, 0),
        stopping: cfg.experiment.iterations == 0,
        audit_rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, "audit", 0)),
        timeouts: 0,
        task,
        metrics: MetricsLog::new(),
        last_row_tick: None,
    };
    if !sim.stopping {
        sim.drive()?;
    }
    sim.finish(epsilon, calibration)
}

/// Ticks for one full cycle over `candidates` models: download, score,
/// swap, train, upload. Thieves are paced the same so their output rate
/// looks plausible.
fn cycle_cost(cfg: &ExperimentConfig, model_bytes: usize, runner: &Runner, candidates: usize) -> u64 {
    let p = &runner.profile;
    let c = &cfg.costs;
    let cost = charge_time(
        p,
        c,
        Work::Transfer {
            bytes: candidates * model_bytes,
        },
    ) + charge_time(
        p,
        c,
        Work::Evaluate {
            samples: candidates * runner.validation.len(),
        },
    ) + charge_time(
        p,
        c,
        Work::Swap {
            batches: candidates.div_ceil(p.memory),
        },
    ) + charge_time(
        p,
        c,
        Work::Train {
            epochs: cfg.training.epochs,
            samples: runner.train.len(),
        },
    ) + charge_time(p, c, Work::Transfer { bytes: model_bytes });
    cost.max(1)
}

const CALIBRATION_ROUNDS: u64 = 256;

/// Honest and falsified replays from start points spread over training:
/// the initial weights and the models after 1, 2, 4, ... 256 chained local
/// rounds. Both distances shrink as the model settles, so a threshold fit
/// on early starts alone lets late falsified nodes through.
pub(super) fn calibrate(cfg: &ExperimentConfig, world: &World) -> Result<Calibration, SimError> {
    let settings = cfg.training_settings();
    let shards = &world.clean_shards;
    let mut starts = vec![world.genesis.clone()];
    let mut w = world.genesis.clone();
    for k in 0..CALIBRATION_ROUNDS {
        let s = settings.with_seed(sub_seed(cfg.experiment.seed, "calibration-start", k));
        w = train(&world.net, &w, &s, &shards[k as usize % shards.len()])?;
        if (k + 1).is_power_of_two() {
            starts.push(w.clone());
        }
    }
    Ok(calibrate_epsilon(
        &world.net,
        &settings,
        &starts,
        shards,
        cfg.pol.noise_std,
        cfg.pol.calibration_trials,
        sub_seed(cfg.experiment.seed, "calibration", 0),
    )?)
}

impl Sim<'_> {
    fn delta(&self) -> u64 {
        self.cfg.settlement.delta
    }

    fn drive(&mut self) -> Result<(), SimError> {
        for r in 0..self.world.runners.len() {
            self.queue.schedule(0, EventKind::Gmue { runner: r })?;
        }
        self.queue.schedule(self.delta(), EventKind::SettlementDue { interval: 0 })?;
        let cap = self.cfg.experiment.max_ticks;
        let mut last_tick = 0;
        while let Some(ev) = self.queue.next_event() {
            debug_assert!(ev.tick >= last_tick, "clock went backwards");
            if cap > 0 && ev.tick > cap {
                break;
            }
            if ev.tick > last_tick {
                self.record_row(last_tick);
                last_tick = ev.tick;
            }
            match ev.kind {
                EventKind::Gmue { runner } => self.on_gmue(runner, ev.tick)?,
                EventKind::Lmue { runner } => self.on_lmue(runner, ev.tick)?,
                EventKind::SettlementDue { interval } => self.on_settlement(interval, ev.tick)?,
                EventKind::PolChallenge { target } => self.on_challenge(target, ev.tick)?,
                EventKind::PolProof { challenge } => self.on_proof(challenge, ev.tick)?,
                EventKind::PolTimeout { challenge } => {
                    if self.book.get(&challenge).is_some_and(|c| c.proof.is_none()) {
                        self.timeouts += 1;
                    }
                }
            }
        }
        self.record_row(last_tick);
        Ok(())
    }

    fn record_row(&mut self, tick: u64) {
        if self.last_row_tick.is_some_and(|t| t >= tick) {
            return;
        }
        self.last_row_tick = Some(tick);
        let mut row = MetricsRow {
            tick,
            framework: "dag".into(),
            best_accuracy: self.best_accuracy,
            current_accuracy: self.current_accuracy,
            total_rewards: 0,
            reward_normal: 0,
            reward_poisoning: 0,
            reward_backdoor: 0,
            reward_stealing: 0,
            reward_colluding: 0,
            reward_lazy: 0,
            node_count: self.dag.len(),
            open_challenges: self.book.open_count(),
            invalidated: self.settler.state.invalidated.len(),
            mean_cycle_ticks: if self.cycle_ticks.1 == 0 {
                0.0
            } else {
                self.cycle_ticks.0 as f64 / self.cycle_ticks.1 as f64
            },
        };
        row.set_rewards(&self.rewards_by_kind);
        self.metrics.push(row);
    }

    fn usable(&self, n: &DagNode) -> bool {
        !self.settler.is_invalidated(&n.id)
    }

    fn on_gmue(&mut self, r: usize, t: u64) -> Result<(), SimError> {
        if self.stopping {
            return Ok(());
        }
        let runner = &mut self.world.runners[r];
        if runner.rng.gen::<f64>() < runner.profile.idle_probability {
            self.queue.schedule(t + 1, EventKind::Gmue { runner: r })?;
            return Ok(());
        }
        let attack = runner.kind != AdversaryKind::Normal && runner.rng.gen::<f64>() < self.cfg.adversary.attack_probability;
        let made = match (runner.kind, attack) {
            (AdversaryKind::Stealing, true) => self.steal(r, t)?,
            (AdversaryKind::Lazy, true) => match self.lazy(r, t)? {
                Some(x) => Some(x),
                None => self.honest(r, t)?,
            },
            (AdversaryKind::Colluding, true) => self.collude(r, t)?,
            _ => self.honest(r, t)?,
        };
        match made {
            Some((node, at)) => {
                self.pending[r] = Some((node, t));
                self.queue.schedule(at, EventKind::Lmue { runner: r })?;
            }
            None => self.queue.schedule(t + 1, EventKind::Gmue { runner: r })?,
        }
        Ok(())
    }

    fn transfer(&self, r: usize, bytes: usize) -> u64 {
        charge_time(&self.world.runners[r].profile, &self.cfg.costs, Work::Transfer { bytes })
    }

    /// Full cycle: sample, score, select, aggregate, train.
    fn honest(&mut self, r: usize, t: u64) -> Result<Option<(DagNode, u64)>, SimError> {
        let w = &mut self.world;
        let runner = &mut w.runners[r];
        let beta = self.cfg.worker.beta;
        let sigma = self.cfg.worker.sigma.min(runner.profile.memory);
        let pool = recent_pool(&self.dag, self.cfg.worker.eta, |n| !self.settler.is_invalidated(&n.id));
        let cands = collect_candidates(&self.dag, &pool, beta, &self.store, &w.net, &runner.validation, &mut runner.rng)?;
        let (sources, evals) = select_sources(&cands, sigma);
        if evals.iter().sum::<f64>() <= 0.0 {
            return Ok(None);
        }
        let settings = self.cfg.training_settings().with_seed(runner.rng.gen());
        let at = t + cycle_cost(self.cfg, w.model_bytes, runner, cands.len());
        let up = match produce_update(
            &runner.key,
            &self.dag,
            &mut self.store,
            &w.net,
            sources,
            evals,
            &settings,
            &runner.train,
            &runner.validation,
            at,
        ) {
            Ok(up) => up,
            Err(WorkerError::Model(ModelError::NonFiniteLoss { .. } | ModelError::NonFiniteWeights(_))) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        Ok(Some((up.node, at)))
    }

    fn steal(&mut self, r: usize, t: u64) -> Result<Option<(DagNode, u64)>, SimError> {
        let runner = &mut self.world.runners[r];
        let at = t + cycle_cost(self.cfg, self.world.model_bytes, runner, self.cfg.worker.beta);
        let invalid = &self.settler.state.invalidated;
        let node = steal_node(&runner.key, &self.dag, |n| !invalid.contains(&n.id), at, &mut runner.rng);
        Ok(node.map(|n| (n, at)))
    }

    fn lazy(&mut self, r: usize, t: u64) -> Result<Option<(DagNode, u64)>, SimError> {
        let at = t + self.transfer(r, self.world.model_bytes).max(1);
        let own: Vec<&DagNode> = self.published[r].iter().filter_map(|id| self.dag.get(id)).collect();
        Ok(lazy_node(&self.world.runners[r].key, &own, at).map(|n| (n, at)))
    }

    /// Honest training, then credit the other colluders' latest nodes (or
    /// the root before any exist). Waits while the root is the only usable
    /// start, since crediting it would then be the truth.
    fn collude(&mut self, r: usize, t: u64) -> Result<Option<(DagNode, u64)>, SimError> {
        let root = self.dag.root().expect("root exists").id;
        let Some((honest, at)) = self.honest(r, t)? else { return Ok(None) };
        if honest.sources == [root] {
            return Ok(None);
        }
        let mut mates: Vec<Digest> = self
            .world
            .runners
            .iter()
            .filter(|o| o.kind == AdversaryKind::Colluding && o.index != r)
            .filter_map(|o| self.published[o.index].last().copied())
            .filter(|id| !self.settler.is_invalidated(id))
            .take(self.cfg.worker.sigma)
            .collect();
        if mates.is_empty() {
            mates.push(root);
        }
        if mates == honest.sources {
            return Ok(None);
        }
        Ok(collude_node(&self.world.runners[r].key, &mates, &honest).map(|n| (n, at)))
    }

    fn on_lmue(&mut self, r: usize, t: u64) -> Result<(), SimError> {
        let Some((node, started)) = self.pending[r].take() else {
            return Ok(());
        };
        let membership: &dyn Membership = match &self.task {
            Some(tr) => &tr.task,
            None => &OpenMembership,
        };
        let admitted = verify_incoming(&self.dag, &node, membership) == Admission::Accept;
        if admitted {
            let id = self.dag.append_node(node.clone())?;
            if let Some(prev) = self.first_commit.get(&node.weight_commit) {
                if *prev != id {
                    self.duplicates.insert(id);
                }
            } else {
                self.first_commit.insert(node.weight_commit, id);
            }
            self.published[r].push(id);
            let acc = self.test_accuracy(&node.weight_commit);
            self.best_accuracy = self.best_accuracy.max(acc);
            if self.cfg.pol.enabled {
                self.queue.schedule(t + 1, EventKind::PolChallenge { target: id })?;
            }
            self.monitor(&node, t)?;
        }
        self.cycles[r] += 1;
        self.cycle_ticks.0 += t - started;
        self.cycle_ticks.1 += 1;
        if median(self.cycles.iter().copied()) >= self.cfg.experiment.iterations {
            self.stopping = true;
        }
        self.queue.schedule(t, EventKind::Gmue { runner: r })?;
        Ok(())
    }

    fn test_accuracy(&mut self, commit: &Digest) -> f64 {
        if let Some(a) = self.test_acc.get(commit) {
            return *a;
        }
        let a = load_weights(&self.store, commit).map_or(0.0, |w| evaluate(&self.world.net, &w, &self.world.test));
        self.test_acc.insert(*commit, a);
        a
    }

    fn monitor(&mut self, node: &DagNode, t: u64) -> Result<(), SimError> {
        let Some(tr) = self.task.as_mut() else { return Ok(()) };
        if tr.task.is_finalized() {
            return Ok(());
        }
        let report = monitor_step(
            &tr.task,
            &tr.registry,
            &self.dag,
            &self.store,
            &self.world.net,
            &self.world.test,
            node,
        )?;
        if let Some(p) = report.penalty {
            tr.penalties.push(p);
        }
        if let Some(acc) = report.winner_accuracy {
            finalize_task(
                &mut tr.task,
                &tr.registry,
                &mut self.dag,
                &mut self.store,
                self.world.keys.key(self.world.operator),
                &self.world.test,
                &node.id,
                acc,
                self.cfg.settlement.reward_per_reference,
                t + 1,
            )?;
            self.stopping = true;
        }
        Ok(())
    }

    fn on_challenge(&mut self, target: Digest, t: u64) -> Result<(), SimError> {
        let Some(node) = self.dag.get(&target) else { return Ok(()) };
        let author = node.author;
        if self.book.is_challenged(&target) {
            return Ok(());
        }
        let audit = self.audit_rng.gen::<f64>() < self.cfg.pol.audit_fraction;
        if !(self.duplicates.contains(&target) || audit) {
            return Ok(());
        }
        let deposit = self.cfg.pol.deposit;
        let ledger = self.settler.ledger();
        let challengers: Vec<usize> = self
            .world
            .runners
            .iter()
            .filter(|o| o.kind == AdversaryKind::Normal && o.key.id() != author && ledger.balance(&o.key.id()) >= deposit)
            .map(|o| o.index)
            .collect();
        if challengers.is_empty() {
            return Ok(());
        }
        let pick = challengers[self.audit_rng.gen_range(0..challengers.len())];
        let key = self.world.runners[pick].key.clone();
        raise_challenge(&mut self.book, &mut self.dag, self.settler.ledger_mut(), &key, &target, deposit, t)?;
        Ok(())
    }

    fn on_proof(&mut self, challenge: Digest, t: u64) -> Result<(), SimError> {
        let Some(c) = self.book.get(&challenge) else { return Ok(()) };
        let Some(runner) = self.world.runner_of(&c.target_author) else {
            return Ok(());
        };
        let seed = sub_seed(self.cfg.experiment.seed, "proof", challenge.prefix_u64());
        respond(
            &mut self.book,
            &mut self.dag,
            &mut self.store,
            &runner.key,
            &challenge,
            &runner.train,
            self.cfg.pol.noise_std,
            seed,
            t,
        )?;
        Ok(())
    }

    fn on_settlement(&mut self, h: u64, t: u64) -> Result<(), SimError> {
        let penalties = self.task.as_mut().map(|tr| std::mem::take(&mut tr.penalties)).unwrap_or_default();
        let Sim {
            settler,
            dag,
            world,
            book,
            store,
            replay_cache,
            ..
        } = self;
        let net = &world.net;
        let mut replay = |view: &Dag, c: &PolChallenge, _: &UserId| {
            let proof = c.proof.as_ref().ok_or(InvalidationReason::Timeout)?;
            let node = view.get(&c.target).ok_or(InvalidationReason::UnreachableSources)?;
            Replayer {
                net,
                store: &*store,
                dag: view,
                cache: replay_cache,
            }
            .distance(node, proof)
        };
        let record = settler
            .settle(t, dag, &world.keys, book, &mut replay, &penalties, &Faults::default())?
            .clone();

        // Authors answer challenges once the challenge itself is settled.
        let timeout = self.cfg.pol.timeout_intervals * self.delta();
        for id in &record.subtree.members {
            let Some(c) = self.book.get(id) else { continue };
            let Some(author) = self.world.runner_of(&c.target_author) else {
                continue;
            };
            self.queue.schedule(t + timeout, EventKind::PolTimeout { challenge: *id })?;
            if author.kind != AdversaryKind::Stealing {
                let upload = self.transfer(author.index, author.train.to_bytes().len()).max(1);
                self.queue.schedule(t + upload, EventKind::PolProof { challenge: *id })?;
            }
        }
        self.refresh_rewards();
        self.current_accuracy = self.consensus_accuracy();

        let idle = self.stopping && self.pending.iter().all(Option::is_none);
        let task_open = self
            .task
            .as_ref()
            .is_some_and(|tr| tr.task.termination.is_some_and(|id| !self.settler.state.collected.contains(&id)));
        let done = idle && self.book.open_count() == 0 && !task_open;
        if !done {
            self.queue
                .schedule(t + self.delta(), EventKind::SettlementDue { interval: h + 1 })?;
        }
        Ok(())
    }

    fn refresh_rewards(&mut self) {
        let mut by_kind = BTreeMap::new();
        for (user, amount) in self.settler.reward_totals() {
            if let Some(r) = self.world.runner_of(&user) {
                *by_kind.entry(r.kind).or_insert(0) += amount;
            }
        }
        self.rewards_by_kind = by_kind;
    }

    /// What a newcomer would build: score the recent usable nodes on a clean
    /// validation set, aggregate the best `sigma`.
    fn consensus_model(&mut self) -> Option<ModelWeights> {
        let pool: Vec<(Digest, Digest)> = recent_pool(&self.dag, self.cfg.worker.eta, |n| self.usable(n))
            .into_iter()
            .map(|n| (n.id, n.weight_commit))
            .collect();
        let mut scored: Vec<(f64, Digest, Digest)> = Vec::with_capacity(pool.len());
        for (id, commit) in pool {
            let acc = match self.observer_acc.get(&commit) {
                Some(a) => *a,
                None => {
                    let a =
                        load_weights(&self.store, &commit).map_or(0.0, |w| evaluate(&self.world.net, &w, &self.world.observer_validation));
                    self.observer_acc.insert(commit, a);
                    a
                }
            };
            scored.push((acc, id, commit));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(self.cfg.worker.sigma);
        let weights: Vec<(ModelWeights, f64)> = scored
            .iter()
            .filter_map(|(a, _, c)| load_weights(&self.store, c).map(|w| (w, *a)))
            .collect();
        let pairs: Vec<(&ModelWeights, f64)> = weights.iter().map(|(w, a)| (w, *a)).collect();
        aggregate(&pairs).ok()
    }

    fn consensus_accuracy(&mut self) -> f64 {
        match self.consensus_model() {
            Some(w) => evaluate(&self.world.net, &w, &self.world.test),
            None => self.current_accuracy,
        }
    }

    fn finish(mut self, epsilon: f64, calibration: Option<Calibration>) -> Result<RunOutput, SimError> {
        self.refresh_rewards();
        let totals = self.settler.reward_totals();
        let ledger = self.settler.ledger();
        let runners: Vec<RunnerSummary> = self
            .world
            .runners
            .iter()
            .map(|r| RunnerSummary {
                index: r.index,
                kind: r.kind,
                cpu: r.profile.cpu,
                bandwidth: r.profile.bandwidth,
                memory: r.profile.memory,
                cycles: self.cycles[r.index],
                published: self.published[r.index].len() as u64,
                rewards: totals.get(&r.key.id()).copied().unwrap_or(0),
                balance: ledger.balance(&r.key.id()),
            })
            .collect();
        let mut pol = PolSummary {
            epsilon,
            challenges: self.book.len(),
            timeouts: self.timeouts,
            unresolved: self.book.open_count(),
            ..PolSummary::default()
        };
        for c in self.book.iter() {
            let Some(v) = &c.verdict else { continue };
            if v.invalidated() {
                pol.invalidated += 1;
                if self
                    .world
                    .runner_of(&c.target_author)
                    .is_some_and(|r| r.kind == AdversaryKind::Normal)
                {
                    pol.honest_invalidated += 1;
                }
            } else {
                pol.proved += 1;
            }
        }
        let mut failures = Vec::new();
        let conservation_ok = ledger.conservation_holds() && self.settler.chain.iter().all(|r| r.conserves());
        if !conservation_ok {
            failures.push("token conservation".to_string());
        }
        let chain_ok = match audit_chain(&self.settler.chain) {
            Ok(()) => true,
            Err(e) => {
                failures.push(format!("settlement chain: {e}"));
                false
            }
        };
        let mut seen = HashSet::new();
        for r in &self.settler.chain {
            for m in &r.subtree.members {
                if !seen.insert(*m) {
                    failures.push(format!("node {} settled twice", m.short()));
                }
            }
        }
        let backdoor_success = if self.world.runners.iter().any(|r| r.kind == AdversaryKind::Backdoor) {
            self.consensus_model().map(|w| backdoor_rate(self.cfg, &self.world, &w))
        } else {
            None
        };
        let summary = Summary {
            framework: "dag".into(),
            seed: self.cfg.experiment.seed,
            iterations: median(self.cycles.iter().copied()),
            end_tick: self.metrics.last().map_or(0, |r| r.tick),
            final_accuracy: self.metrics.final_accuracy(),
            best_accuracy: self.metrics.best_accuracy(),
            genesis_accuracy: self.genesis_accuracy,
            runners,
            rewards_by_kind: self.rewards_by_kind.clone(),
            pol,
            settlements: self.settler.chain.len(),
            conservation_ok,
            chain_ok,
            task_finalized: self.task.as_ref().is_some_and(|t| t.task.is_finalized()),
            backdoor_success,
            invariant_failures: failures,
        };
        Ok(RunOutput {
            config: self.cfg.clone(),
            metrics: self.metrics,
            summary,
            dag: Some(self.dag),
            chain: self.settler.chain,
            calibration,
        })
    }
}
