//! DAG node structure and its canonical byte encoding.

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, sign, verify, Digest, Keypair, Signature, UserId};
use crate::model::TrainingSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Genesis,
    ModelUpdate,
    TaskGenesis,
    TaskTermination,
    Settlement,
    PolChallenge,
    PolProof,
    PolResult,
}

impl NodeKind {
    fn code(self) -> u8 {
        match self {
            NodeKind::Genesis => 0,
            NodeKind::ModelUpdate => 1,
            NodeKind::TaskGenesis => 2,
            NodeKind::TaskTermination => 3,
            NodeKind::Settlement => 4,
            NodeKind::PolChallenge => 5,
            NodeKind::PolProof => 6,
            NodeKind::PolResult => 7,
        }
    }

    pub fn is_root(self) -> bool {
        matches!(self, NodeKind::Genesis | NodeKind::TaskGenesis)
    }

    /// Kinds whose weight reference can be aggregated from.
    pub fn carries_model(self) -> bool {
        matches!(self, NodeKind::Genesis | NodeKind::ModelUpdate | NodeKind::TaskGenesis)
    }
}

/// Published task parameters carried by a task-genesis node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub task_id: u64,
    pub test_commit: Digest,
    pub target_accuracy: f64,
    pub prize: u64,
    pub contest: String,
    pub penalty: String,
    pub committee: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationInfo {
    pub task_id: u64,
    pub winner: Digest,
    pub winner_author: UserId,
    pub test_uri: String,
    pub reevaluated: f64,
    pub allocation: Vec<(UserId, u64)>,
}

/// Kind-specific content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Payload {
    #[default]
    None,
    Task(TaskInfo),
    Termination(TerminationInfo),
    Settlement {
        interval: u64,
        record: Digest,
    },
    Challenge {
        target: Digest,
        deposit: u64,
    },
    Proof {
        challenge: Digest,
        data_commit: Digest,
        data_uri: String,
    },
    Result {
        challenge: Digest,
        proved: bool,
    },
}

/// Node contents before signing.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDraft {
    pub author: UserId,
    pub kind: NodeKind,
    pub sources: Vec<Digest>,
    pub source_evals: Vec<f64>,
    pub weight_commit: Digest,
    pub weight_uri: String,
    pub training_settings: TrainingSettings,
    pub self_eval: f64,
    pub timestamp: u64,
    pub payload: Payload,
}

impl NodeDraft {
    /// A node without model content (challenge, proof, settlement ...).
    pub fn bare(author: UserId, kind: NodeKind, sources: Vec<Digest>, timestamp: u64, payload: Payload) -> Self {
        Self {
            author,
            kind,
            sources,
            source_evals: Vec::new(),
            weight_commit: Digest::ZERO,
            weight_uri: String::new(),
            training_settings: TrainingSettings::default(),
            self_eval: 0.0,
            timestamp,
            payload,
        }
    }

    pub fn sign(self, key: &Keypair) -> DagNode {
        let bytes = self.encode();
        let signature = sign(key, &bytes);
        DagNode {
            id: hash(&bytes),
            author: self.author,
            kind: self.kind,
            sources: self.sources,
            source_evals: self.source_evals,
            weight_commit: self.weight_commit,
            weight_uri: self.weight_uri,
            training_settings: self.training_settings,
            self_eval: self.self_eval,
            timestamp: self.timestamp,
            payload: self.payload,
            signature,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_fields(
            &self.author,
            self.kind,
            &self.sources,
            &self.source_evals,
            &self.weight_commit,
            &self.weight_uri,
            &self.training_settings,
            self.self_eval,
            self.timestamp,
            &self.payload,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagNode {
    pub id: Digest,
    pub author: UserId,
    pub kind: NodeKind,
    pub sources: Vec<Digest>,
    pub source_evals: Vec<f64>,
    pub weight_commit: Digest,
    pub weight_uri: String,
    pub training_settings: TrainingSettings,
    pub self_eval: f64,
    pub timestamp: u64,
    pub payload: Payload,
    pub signature: Signature,
}

impl DagNode {
    /// Canonical encoding minus the id and signature.
    pub fn encode(&self) -> Vec<u8> {
        encode_fields(
            &self.author,
            self.kind,
            &self.sources,
            &self.source_evals,
            &self.weight_commit,
            &self.weight_uri,
            &self.training_settings,
            self.self_eval,
            self.timestamp,
            &self.payload,
        )
    }

    pub fn to_draft(&self) -> NodeDraft {
        NodeDraft {
            author: self.author,
            kind: self.kind,
            sources: self.sources.clone(),
            source_evals: self.source_evals.clone(),
            weight_commit: self.weight_commit,
            weight_uri: self.weight_uri.clone(),
            training_settings: self.training_settings.clone(),
            self_eval: self.self_eval,
            timestamp: self.timestamp,
            payload: self.payload.clone(),
        }
    }

    /// Id matches the encoding and the signature verifies against the author.
    pub fn verify_signature(&self) -> bool {
        let bytes = self.encode();
        hash(&bytes) == self.id && verify(&self.author, &bytes, &self.signature)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

#[allow(clippy::too_many_arguments)]
fn encode_fields(
    author: &UserId,
    kind: NodeKind,
    sources: &[Digest],
    source_evals: &[f64],
    weight_commit: &Digest,
    weight_uri: &str,
    settings: &TrainingSettings,
    self_eval: f64,
    timestamp: u64,
    payload: &Payload,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + 32 * sources.len());
    out.extend_from_slice(b"dagfed/node/v1");
    let mut a = author.index.to_le_bytes().to_vec();
    a.extend_from_slice(&author.public_key);
    put_bytes(&mut out, &a);
    put_bytes(&mut out, &[kind.code()]);
    let s: Vec<u8> = sources.iter().flat_map(|d| d.0).collect();
    put_bytes(&mut out, &s);
    let e: Vec<u8> = source_evals.iter().flat_map(|v| v.to_le_bytes()).collect();
    put_bytes(&mut out, &e);
    put_bytes(&mut out, weight_commit.as_bytes());
    put_bytes(&mut out, weight_uri.as_bytes());
    put_bytes(&mut out, &settings.canonical_bytes());
    put_bytes(&mut out, &self_eval.to_le_bytes());
    put_bytes(&mut out, &timestamp.to_le_bytes());
    put_bytes(&mut out, &serde_json::to_vec(payload).expect("payload serializes"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_sign_and_verify_node() {
        let k = Keypair::derive(1, 3);
        let node = NodeDraft::bare(k.id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(&k);
        assert!(node.verify_signature());
        let mut forged = node.clone();
        forged.timestamp = 5;
        assert!(!forged.verify_signature());
        let other = Keypair::derive(1, 4);
        let mut stolen = node.to_draft();
        stolen.author = other.id();
        let resigned = stolen.sign(&k);
        assert!(!resigned.verify_signature());
    }

    #[test]
    fn test_encoding_separates_fields() {
        let k = Keypair::derive(1, 0);
        let mut a = NodeDraft::bare(k.id(), NodeKind::ModelUpdate, vec![Digest::ZERO], 1, Payload::None);
        a.weight_uri = "ab".into();
        let mut b = a.clone();
        b.weight_uri = "a".into();
        b.training_settings.optimizer = "bsgd".into();
        assert_ne!(a.encode(), b.encode());
    }

    #[test]
    fn test_json_field_names() {
        let k = Keypair::derive(1, 0);
        let node = NodeDraft::bare(
            k.id(),
            NodeKind::PolChallenge,
            vec![],
            2,
            Payload::Challenge {
                target: Digest::ZERO,
                deposit: 4,
            },
        )
        .sign(&k);
        let v: serde_json::Value = serde_json::to_value(&node).unwrap();
        for f in [
            "id",
            "author",
            "kind",
            "sources",
            "source_evals",
            "weight_commit",
            "weight_uri",
            "training_settings",
            "self_eval",
            "timestamp",
            "signature",
        ] {
            assert!(v.get(f).is_some(), "missing {f}");
        }
        assert_eq!(v["kind"], "pol-challenge");
        let back: DagNode = serde_json::from_value(v).unwrap();
        assert_eq!(back, node);
    }
}
