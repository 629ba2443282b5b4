//! Contributor loop: sample recent nodes, evaluate them locally, keep the
//! best `sigma`, aggregate, train, self-evaluate, sign.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, Keypair};
use crate::dag::{Dag, DagNode, NodeDraft, NodeKind, Payload};
use crate::dataset::Dataset;
use crate::model::{aggregate, evaluate, train, ModelError, ModelWeights, Network, TrainingSettings};
use crate::store::{uri_for, BlobStore};

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("dag has no model to start from")]
    EmptyDag,
    #[error("weights for {0} are missing or malformed")]
    MissingWeights(Digest),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerPolicy {
    /// Candidates evaluated per cycle.
    pub beta: usize,
    /// Candidates kept as sources.
    pub sigma: usize,
    /// Recency window sampled from.
    pub eta: usize,
    pub idle_probability: f64,
    pub shards: Vec<usize>,
    pub architecture: String,
}

impl Default for WorkerPolicy {
    fn default() -> Self {
        Self {
            beta: 6,
            sigma: 5,
            eta: 30,
            idle_probability: 0.1,
            shards: Vec::new(),
            architecture: "mlp".into(),
        }
    }
}

impl WorkerPolicy {
    pub fn validate(&self) -> Result<(), WorkerError> {
        if !(1 <= self.sigma && self.sigma <= self.beta && self.beta <= self.eta) {
            return Err(WorkerError::Policy(format!(
                "need 1 <= sigma <= beta <= eta, got {} {} {}",
                self.sigma, self.beta, self.eta
            )));
        }
        if !(0.0..=1.0).contains(&self.idle_probability) {
            return Err(WorkerError::Policy(format!(
                "idle probability {} outside [0, 1]",
                self.idle_probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub node: Digest,
    pub eval: f64,
}

pub fn load_weights<S: BlobStore>(store: &S, commit: &Digest) -> Option<ModelWeights> {
    let bytes = store.get(commit).ok()??;
    ModelWeights::from_bytes(&bytes).ok()
}

/// The `eta` most recent model-carrying nodes accepted by `usable`, oldest
/// first.
pub fn recent_pool(dag: &Dag, eta: usize, mut usable: impl FnMut(&DagNode) -> bool) -> Vec<&DagNode> {
    let mut pool: Vec<&DagNode> = dag.iter().rev().filter(|n| n.kind.carries_model() && usable(n)).take(eta).collect();
    pool.reverse();
    pool
}

/// Samples up to `beta` distinct nodes uniformly from the recency pool and
/// scores each on the local test shard. Falls back to the root.
pub fn collect_candidates<S: BlobStore, R: Rng>(
    dag: &Dag,
    pool: &[&DagNode],
    beta: usize,
    store: &S,
    net: &Network,
    test: &Dataset,
    rng: &mut R,
) -> Result<Vec<Candidate>, WorkerError> {
    let chosen: Vec<&DagNode> = if pool.is_empty() {
        vec![dag.root().ok_or(WorkerError::EmptyDag)?]
    } else {
        let mut idx = sample(rng, pool.len(), beta.min(pool.len())).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i]).collect()
    };
    let mut out = Vec::with_capacity(chosen.len());
    for n in chosen {
        let w = load_weights(store, &n.weight_commit).ok_or(WorkerError::MissingWeights(n.id))?;
        out.push(Candidate {
            node: n.id,
            eval: evaluate(net, &w, test),
        });
    }
    Ok(out)
}

/// Top `sigma` by evaluation, descending; ties go to the lower node id.
pub fn select_sources(candidates: &[Candidate], sigma: usize) -> (Vec<Digest>, Vec<f64>) {
    let mut c = candidates.to_vec();
    c.sort_by(|a, b| b.eval.total_cmp(&a.eval).then(a.node.cmp(&b.node)));
    c.truncate(sigma);
    c.into_iter().map(|c| (c.node, c.eval)).unzip()
}

/// Aggregation start point for a source list, as a verifier would rebuild it.
pub fn aggregate_sources<S: BlobStore>(dag: &Dag, store: &S, sources: &[Digest], evals: &[f64]) -> Result<ModelWeights, WorkerError> {
    let mut ws = Vec::with_capacity(sources.len());
    for s in sources {
        let commit = dag.get(s).ok_or(WorkerError::MissingWeights(*s))?.weight_commit;
        ws.push(load_weights(store, &commit).ok_or(WorkerError::MissingWeights(*s))?);
    }
    let pairs: Vec<(&ModelWeights, f64)> = ws.iter().zip(evals.iter().copied()).collect();
    Ok(aggregate(&pairs)?)
}

/// A signed update and its weights; the caller appends it.
#[derive(Debug, Clone)]
pub struct Update {
    pub node: DagNode,
    pub weights: ModelWeights,
}

/// Aggregates, trains on `train_set`, scores on `test`, stores the weights,
/// and signs a node stamped `timestamp`.
#[allow(clippy::too_many_arguments)]
pub fn produce_update<S: BlobStore>(
    key: &Keypair,
    dag: &Dag,
    store: &mut S,
    net: &Network,
    sources: Vec<Digest>,
    evals: Vec<f64>,
    settings: &TrainingSettings,
    train_set: &Dataset,
    test: &Dataset,
    timestamp: u64,
) -> Result<Update, WorkerError> {
    let start = aggregate_sources(dag, store, &sources, &evals)?;
    let weights = train(net, &start, settings, train_set)?;
    let commit = store.put(&weights.to_bytes())?;
    let mut d = NodeDraft::bare(key.id(), NodeKind::ModelUpdate, sources, timestamp, Payload::None);
    d.source_evals = evals;
    d.weight_commit = commit;
    d.weight_uri = uri_for(&commit);
    d.training_settings = settings.clone();
    d.self_eval = evaluate(net, &weights, test);
    Ok(Update {
        node: d.sign(key),
        weights,
    })
}

/// Per-worker state for the simple synchronous loop.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub key: Keypair,
    pub policy: WorkerPolicy,
    pub train: Dataset,
    pub test: Dataset,
    pub settings: TrainingSettings,
    pub published: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    Idle,
    Published(Digest),
}

/// One tick: idle with the policy's probability or when every candidate
/// scores zero, else run the full cycle and append the node stamped `tick`.
/// Training seeds differ per publish.
pub fn worker_tick<S: BlobStore, R: Rng>(
    state: &mut WorkerState,
    dag: &mut Dag,
    store: &mut S,
    net: &Network,
    tick: u64,
    rng: &mut R,
) -> Result<TickOutcome, WorkerError> {
    if rng.gen::<f64>() < state.policy.idle_probability {
        return Ok(TickOutcome::Idle);
    }
    let pool = recent_pool(dag, state.policy.eta, |n| n.timestamp < tick);
    let cands = collect_candidates(dag, &pool, state.policy.beta, store, net, &state.test, rng)?;
    let (sources, evals) = select_sources(&cands, state.policy.sigma);
    // Nothing scores above zero locally: no weighting exists, sit out.
    if evals.iter().sum::<f64>() <= 0.0 {
        return Ok(TickOutcome::Idle);
    }
    let settings = state.settings.with_seed(rng.gen());
    let up = produce_update(
        &state.key,
        dag,
        store,
        net,
        sources,
        evals,
        &settings,
        &state.train,
        &state.test,
        tick,
    )?;
    let id = dag.append_node(up.node).map_err(|e| WorkerError::Policy(e.to_string()))?;
    state.published.push(id);
    Ok(TickOutcome::Published(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyRing;
    use crate::dataset::{blobs, BlobSpec};
    use crate::model::Architecture;
    use crate::store::MemoryStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (KeyRing, Dag, MemoryStore, Network, Dataset) {
        let keys = KeyRing::derive(2, 4);
        let data = blobs(
            &BlobSpec {
                samples: 200,
                ..BlobSpec::default()
            },
            3,
        );
        let net = Network::new(&Architecture::mlp(data.dim(), &[], data.classes() as usize)).unwrap();
        let mut store = MemoryStore::new();
        let w = net.init_weights(1);
        let c = store.put(&w.to_bytes()).unwrap();
        let mut g = NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None);
        g.weight_commit = c;
        g.weight_uri = uri_for(&c);
        let mut dag = Dag::new();
        dag.append_node(g.sign(keys.key(0))).unwrap();
        (keys, dag, store, net, data)
    }

    fn cand(b: u8, e: f64) -> Candidate {
        Candidate {
            node: Digest([b; 32]),
            eval: e,
        }
    }

    #[test]
    fn test_select_sources_order_and_ties() {
        let c = [cand(1, 0.9), cand(2, 0.5), cand(3, 0.7)];
        let (ids, evals) = select_sources(&c, 2);
        assert_eq!(ids, vec![Digest([1; 32]), Digest([3; 32])]);
        assert_eq!(evals, vec![0.9, 0.7]);
        assert_eq!(select_sources(&c, 10).0.len(), 3);
        let (ids, _) = select_sources(&[cand(9, 0.5), cand(4, 0.5)], 1);
        assert_eq!(ids, vec![Digest([4; 32])]);
    }

    #[test]
    fn test_bootstrap_uses_genesis() {
        let (_, dag, store, net, data) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = collect_candidates(&dag, &[], 6, &store, &net, &data, &mut rng).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].node, dag.root().unwrap().id);
        assert!((0.0..=1.0).contains(&c[0].eval));
    }

    #[test]
    fn test_zero_step_update_keeps_genesis_weights() {
        let (keys, dag, mut store, net, data) = setup();
        let g = dag.root().unwrap().clone();
        let s = TrainingSettings {
            step_limit: Some(0),
            ..TrainingSettings::default()
        };
        let up = produce_update(keys.key(1), &dag, &mut store, &net, vec![g.id], vec![0.3], &s, &data, &data, 1).unwrap();
        assert_eq!(up.node.weight_commit, g.weight_commit);
        let gw = load_weights(&store, &g.weight_commit).unwrap();
        assert_eq!(up.node.self_eval, evaluate(&net, &gw, &data));
    }

    #[test]
    fn test_idle_extremes_and_determinism() {
        let run = |p: f64| {
            let (keys, mut dag, mut store, net, data) = setup();
            let mut st = WorkerState {
                key: keys.key(1).clone(),
                policy: WorkerPolicy {
                    idle_probability: p,
                    ..WorkerPolicy::default()
                },
                train: data.clone(),
                test: data,
                settings: TrainingSettings::sgd(1, 0.1, 20, 0),
                published: Vec::new(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for t in 1..=20 {
                worker_tick(&mut st, &mut dag, &mut store, &net, t, &mut rng).unwrap();
            }
            st.published
        };
        assert!(run(1.0).is_empty());
        let a = run(0.0);
        assert_eq!(a.len(), 20);
        assert_eq!(a, run(0.0));
    }
}
