//! Dishonest contributor behaviors.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, Keypair};
use crate::dag::{Dag, DagNode, NodeKind};
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdversaryError {
    #[error("unknown adversary kind {0:?}")]
    UnknownKind(String),
    #[error("patch {patch} does not fit a {height}x{width} image")]
    PatchTooLarge { patch: usize, height: usize, width: usize },
    #[error("backdoor needs image-shaped samples")]
    NotAnImage,
    #[error("label flipping needs at least two classes")]
    TooFewClasses,
    #[error("fraction {0} outside [0, 1]")]
    BadFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    Normal,
    Poisoning,
    Backdoor,
    Stealing,
    Colluding,
    Lazy,
}

impl AdversaryKind {
    pub const ALL: [AdversaryKind; 6] = [
        AdversaryKind::Normal,
        AdversaryKind::Poisoning,
        AdversaryKind::Backdoor,
        AdversaryKind::Stealing,
        AdversaryKind::Colluding,
        AdversaryKind::Lazy,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AdversaryKind::Normal => "normal",
            AdversaryKind::Poisoning => "poisoning",
            AdversaryKind::Backdoor => "backdoor",
            AdversaryKind::Stealing => "stealing",
            AdversaryKind::Colluding => "colluding",
            AdversaryKind::Lazy => "lazy",
        }
    }

    /// Kinds whose nodes misrepresent where their weights came from.
    pub fn misattributes(self) -> bool {
        matches!(self, AdversaryKind::Stealing | AdversaryKind::Colluding)
    }
}

impl fmt::Display for AdversaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.tag())
    }
}

impl FromStr for AdversaryKind {
    type Err = AdversaryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| AdversaryError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub kind: AdversaryKind,
    /// Share of runners with this behavior.
    pub fraction: f64,
    /// Chance per cycle that the attack is used instead of honest work.
    pub attack_probability: f64,
    /// Share of a poisoned shard's samples that are altered.
    pub sample_fraction: f64,
    pub target_label: u32,
    pub patch: usize,
    /// Colluder runner index to the runners it credits.
    pub conspirators: BTreeMap<usize, Vec<usize>>,
}

impl AdversaryConfig {
    pub fn new(kind: AdversaryKind, fraction: f64) -> Self {
        Self {
            kind,
            fraction,
            attack_probability: 1.0,
            sample_fraction: 1.0,
            target_label: 0,
            patch: 2,
            conspirators: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), AdversaryError> {
        for f in [self.fraction, self.attack_probability, self.sample_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(AdversaryError::BadFraction(f));
            }
        }
        Ok(())
    }
}

fn chosen_samples(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>, AdversaryError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(AdversaryError::BadFraction(fraction));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate((n as f64 * fraction).round() as usize);
    idx.sort_unstable();
    Ok(idx)
}

/// Label flip `y -> (y + 1) mod C` on a `fraction` of the samples.
pub fn poison_shard(shard: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, AdversaryError> {
    let c = shard.classes();
    if c < 2 {
        return Err(AdversaryError::TooFewClasses);
    }
    let mut out = shard.clone();
    for i in chosen_samples(shard.len(), fraction, seed)? {
        out.set_label(i, (shard.label(i) + 1) % c);
    }
    Ok(out)
}

/// Saturates a `patch`x`patch` top-left square and relabels to `target` on
/// a `fraction` of the samples. Intensity is the shard's feature maximum.
pub fn backdoor_shard(shard: &Dataset, patch: usize, target: u32, fraction: f64, seed: u64) -> Result<Dataset, AdversaryError> {
    let shape = shard.image_shape().ok_or(AdversaryError::NotAnImage)?;
    if patch == 0 || patch > shape.height || patch > shape.width {
        return Err(AdversaryError::PatchTooLarge {
            patch,
            height: shape.height,
            width: shape.width,
        });
    }
    let peak = shard.raw_features().iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let mut out = shard.clone();
    for i in chosen_samples(shard.len(), fraction, seed)? {
        stamp_patch(out.features_mut(i), shape.width, patch, peak);
        out.set_label(i, target);
    }
    Ok(out)
}

/// Applies the trigger to one flattened image.
pub fn stamp_patch(x: &mut [f64], width: usize, patch: usize, value: f64) {
    for r in 0..patch {
        for c in 0..patch {
            x[r * width + c] = value;
        }
    }
}

/// Every sample stamped with the trigger; used to measure attack success.
pub fn triggered_copy(data: &Dataset, patch: usize, value: f64) -> Result<Dataset, AdversaryError> {
    let shape = data.image_shape().ok_or(AdversaryError::NotAnImage)?;
    let mut out = data.clone();
    for i in 0..out.len() {
        stamp_patch(out.features_mut(i), shape.width, patch, value);
    }
    Ok(out)
}

/// Re-signs a random model update by someone else as the attacker's own,
/// keeping its sources, evaluations, settings and weight reference.
pub fn steal_node<R: Rng>(
    attacker: &Keypair,
    dag: &Dag,
    eligible: impl Fn(&DagNode) -> bool,
    timestamp: u64,
    rng: &mut R,
) -> Option<DagNode> {
    let victims: Vec<&DagNode> = dag
        .iter()
        .filter(|n| n.kind == NodeKind::ModelUpdate && n.author != attacker.id() && n.timestamp < timestamp && eligible(n))
        .collect();
    let v = victims.choose(rng)?;
    let mut d = v.to_draft();
    d.author = attacker.id();
    d.timestamp = timestamp;
    Some(d.sign(attacker))
}

/// Keeps honestly trained weights but claims the conspirators' nodes as
/// sources, each with a perfect evaluation.
pub fn collude_node(attacker: &Keypair, conspirator_nodes: &[Digest], honest: &DagNode) -> Option<DagNode> {
    if conspirator_nodes.is_empty() {
        return None;
    }
    let mut d = honest.to_draft();
    d.author = attacker.id();
    d.sources = conspirator_nodes.to_vec();
    d.source_evals = vec![1.0; conspirator_nodes.len()];
    Some(d.sign(attacker))
}

/// Re-publishes the attacker's latest node with a fresh timestamp.
pub fn lazy_node(attacker: &Keypair, own_history: &[&DagNode], timestamp: u64) -> Option<DagNode> {
    let last = own_history
        .iter()
        .rev()
        .find(|n| n.author == attacker.id() && n.kind == NodeKind::ModelUpdate)?;
    let mut d = last.to_draft();
    d.timestamp = timestamp;
    Some(d.sign(attacker))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyRing;
    use crate::dag::{NodeDraft, Payload};
    use crate::dataset::{blobs, BlobSpec};

    fn data() -> Dataset {
        blobs(
            &BlobSpec {
                samples: 100,
                ..BlobSpec::default()
            },
            4,
        )
    }

    #[test]
    fn test_poison_flips_labels_only() {
        let d = data();
        let p = poison_shard(&d, 1.0, 1).unwrap();
        assert_eq!(p.raw_features(), d.raw_features());
        for i in 0..d.len() {
            assert_eq!(p.label(i), (d.label(i) + 1) % 10);
        }
        let two = Dataset::new(1, 2, vec![0.0, 1.0], vec![0, 1]).unwrap();
        assert_eq!(poison_shard(&two, 1.0, 0).unwrap().labels(), &[1, 0]);
    }

    #[test]
    fn test_backdoor_geometry() {
        let d = data();
        let b = backdoor_shard(&d, 2, 7, 0.5, 3).unwrap();
        let changed: Vec<usize> = (0..d.len())
            .filter(|&i| b.features(i) != d.features(i) || b.label(i) != d.label(i))
            .collect();
        assert!(changed.len() <= 50);
        let peak = d.raw_features().iter().copied().fold(f64::MIN, f64::max).max(1.0);
        for &i in &changed {
            assert_eq!(b.label(i), 7);
            let x = b.features(i);
            assert_eq!([x[0], x[1], x[8], x[9]], [peak; 4]);
            assert_eq!(x[2..8], d.features(i)[2..8]);
        }
        let clean = (0..d.len()).filter(|i| !changed.contains(i)).count();
        assert!(clean >= 50);
        assert!(matches!(
            backdoor_shard(&d, 9, 0, 1.0, 0),
            Err(AdversaryError::PatchTooLarge { .. })
        ));
    }

    #[test]
    fn test_steal_and_lazy() {
        let keys = KeyRing::derive(1, 3);
        let mut dag = Dag::new();
        let g = dag
            .append_node(NodeDraft::bare(keys.key(0).id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(keys.key(0)))
            .unwrap();
        let mut v = NodeDraft::bare(keys.key(1).id(), NodeKind::ModelUpdate, vec![g], 1, Payload::None);
        v.source_evals = vec![0.4];
        let victim = dag.append_node(v.sign(keys.key(1))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stolen = steal_node(keys.key(2), &dag, |_| true, 2, &mut rng).unwrap();
        assert!(stolen.verify_signature());
        assert_eq!(stolen.author, keys.key(2).id());
        assert_eq!(stolen.weight_commit, dag.get(&victim).unwrap().weight_commit);
        assert!(steal_node(keys.key(1), &dag, |_| true, 2, &mut rng).is_none());

        let hist = [dag.get(&victim).unwrap()];
        assert!(lazy_node(keys.key(2), &hist, 3).is_none());
        let lazy = lazy_node(keys.key(1), &hist, 3).unwrap();
        assert_eq!(lazy.weight_commit, hist[0].weight_commit);
        assert_ne!(lazy.id, victim);
        dag.append_node(lazy).unwrap();
        assert!(!dag.duplicate_commits().is_empty());
    }

    #[test]
    fn test_kind_tags_round_trip() {
        for k in AdversaryKind::ALL {
            assert_eq!(k.tag().parse::<AdversaryKind>().unwrap(), k);
        }
        assert!("sneaky".parse::<AdversaryKind>().is_err());
    }
}
