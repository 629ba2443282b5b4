//! Data, keys and runners shared by every framework in a comparison.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{backdoor_shard, poison_shard, AdversaryKind};
use crate::crypto::{hash_parts, KeyRing, Keypair};
use crate::dataset::{blobs, build_non_iid_shards, digits, BlobSpec, Dataset};
use crate::model::{Architecture, ModelWeights, Network};
use crate::sim::config::ExperimentConfig;
use crate::sim::profile::RunnerProfile;
use crate::sim::SimError;

/// Stable sub-seed for one labelled purpose.
pub fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    hash_parts([
        b"dagfed/sim".as_slice(),
        label.as_bytes(),
        &seed.to_le_bytes(),
        &index.to_le_bytes(),
    ])
    .prefix_u64()
}

#[derive(Debug, Clone)]
pub struct Runner {
    pub index: usize,
    pub kind: AdversaryKind,
    pub key: Keypair,
    pub profile: RunnerProfile,
    /// Training data as the runner uses it (attacks applied).
    pub train: Dataset,
    /// Local evaluation set for candidate scoring.
    pub validation: Dataset,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct World {
    pub net: Network,
    pub genesis: ModelWeights,
    pub test: Dataset,
    /// Clean evaluation set used to pick the reported consensus model.
    pub observer_validation: Dataset,
    pub clean_shards: Vec<Dataset>,
    pub runners: Vec<Runner>,
    pub keys: KeyRing,
    /// Key index of the operator (genesis or task publisher).
    pub operator: u32,
    pub model_bytes: usize,
}

impl World {
    pub fn operator_key(&self) -> &Keypair {
        self.keys.key(self.operator)
    }

    pub fn miner_key(&self, m: usize) -> &Keypair {
        self.keys.key(self.operator + 1 + m as u32)
    }

    pub fn runner_of(&self, user: &crate::crypto::UserId) -> Option<&Runner> {
        self.runners.get(user.index as usize).filter(|r| r.key.id() == *user)
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, SimError> {
    let d = &cfg.dataset;
    Ok(match d.name.as_str() {
        "digits" => digits(),
        "blobs" => blobs(
            &BlobSpec {
                samples: d.blob_samples,
                spread: d.blob_spread,
                ..BlobSpec::default()
            },
            sub_seed(cfg.experiment.seed, "blobs", 0),
        ),
        path => Dataset::read_csv(std::path::Path::new(path), None)?,
    })
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<World, SimError> {
    let seed = cfg.experiment.seed;
    let data = load_dataset(cfg)?;
    let d = &cfg.dataset;
    let n = cfg.runners.count;
    let need = d.train_size + d.test_size + d.validation_size;
    if data.len() < need {
        return Err(SimError::Config(crate::sim::config::ConfigError::Invalid {
            path: "dataset".into(),
            why: format!("{} samples available, train + test + validation need {need}", data.len()),
        }));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, "split", 0)));
    let train = data.subset(&idx[..d.train_size]);
    let test = data.subset(&idx[d.train_size..d.train_size + d.test_size]);
    let pool: Vec<usize> = idx[d.train_size + d.test_size..].to_vec();

    let plan = build_non_iid_shards(&train, n, sub_seed(seed, "shards", 0))?;
    let clean_shards: Vec<Dataset> = plan.shards.iter().map(|s| train.subset(s)).collect();

    let arch = Architecture::for_dataset(&cfg.training.architecture, &data)?;
    let net = Network::new(&arch)?;
    let genesis = net.init_weights(sub_seed(seed, "genesis", 0));
    let keys = KeyRing::derive(seed, (n + 1 + cfg.baseline.miners) as u32);

    let pick = |label: &str, i: u64| -> Dataset {
        let mut p = pool.clone();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, label, i)));
        data.subset(&p[..d.validation_size])
    };
    let observer_validation = pick("observer", 0);
    let a = &cfg.adversary;
    let roles = cfg.roles();
    let mut runners = Vec::with_capacity(n);
    for (i, &kind) in roles.iter().enumerate() {
        let mut train = clean_shards[i].clone();
        let mut validation = pick("validation", i as u64);
        let attack_seed = sub_seed(seed, "attack", i as u64);
        match kind {
            AdversaryKind::Poisoning => {
                train = poison_shard(&train, a.poison_sample_fraction, attack_seed)?;
                validation = poison_shard(&validation, a.poison_sample_fraction, attack_seed ^ 1)?;
            }
            AdversaryKind::Backdoor => {
                train = backdoor_shard(&train, a.backdoor_patch, a.backdoor_target, a.backdoor_sample_fraction, attack_seed)?;
            }
            _ => {}
        }
        runners.push(Runner {
            index: i,
            kind,
            key: keys.key(i as u32).clone(),
            profile: cfg.profile(i),
            train,
            validation,
            rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, "runner", i as u64)),
        });
    }
    let model_bytes = genesis.to_bytes().len();
    Ok(World {
        net,
        genesis,
        test,
        observer_validation,
        clean_shards,
        runners,
        keys,
        operator: n as u32,
        model_bytes,
    })
}

/// Median of per-runner counts (upper median for even sizes).
pub fn median(counts: impl IntoIterator<Item = u64>) -> u64 {
    let mut v: Vec<u64> = counts.into_iter().collect();
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    v[v.len() / 2]
}
