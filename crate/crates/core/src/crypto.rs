//! Hashing, user identities, signatures and the committee-election VRF.
//!
//! Everything here is deterministic: key material is derived from the
//! simulation seed, signatures are Ed25519 (deterministic nonces), and the
//! VRF output is the SHA-256 digest of a deterministic signature over the
//! seed. Verification recomputes the digest and checks the signature against
//! the public key, which is enough for desk-scale experiments.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    /// First 8 bytes as a big-endian integer; handy for seeding RNGs.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }

    /// Interprets the digest as a fraction of 2^256, truncated to f64 precision.
    pub fn unit_fraction(&self) -> f64 {
        (self.prefix_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Short hex prefix for logs and file names.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid digest hex"))
    }
}

/// SHA-256 of `data`.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// A participant: public key plus the stable display index `k`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserId {
    pub index: u32,
    #[serde(with = "hex_key")]
    pub public_key: [u8; 32],
}

impl PartialOrd for UserId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for UserId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.index, self.public_key).cmp(&(other.index, other.public_key))
    }
}

impl fmt::Debug for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "U{}", self.index)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "U{}", self.index)
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("public key must be 32 bytes"))
    }
}

/// Signature bytes. Kept as a byte vector so malformed input can be carried
/// around and rejected by [`verify`] instead of failing to parse.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..self.0.len().min(6)]))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map(Signature).map_err(serde::de::Error::custom)
    }
}

/// A user's private signing key together with its public identity.
#[derive(Clone)]
pub struct Keypair {
    id: UserId,
    signing: SigningKey,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair").field("id", &self.id).finish_non_exhaustive()
    }
}

impl Keypair {
    pub fn from_secret(index: u32, secret: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&secret);
        let id = UserId {
            index,
            public_key: signing.verifying_key().to_bytes(),
        };
        Self { id, signing }
    }

    /// Key for user `index`, derived from the global simulation seed so that
    /// runs are reproducible byte for byte.
    pub fn derive(global_seed: u64, index: u32) -> Self {
        let secret = hash_parts([b"dagfed/key".as_slice(), &global_seed.to_le_bytes(), &index.to_le_bytes()]);
        Self::from_secret(index, secret.0)
    }

    pub fn id(&self) -> UserId {
        self.id
    }
}

/// Every simulated user's key, indexed by display index.
#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    keys: Vec<Keypair>,
}

impl KeyRing {
    pub fn derive(global_seed: u64, count: u32) -> Self {
        Self {
            keys: (0..count).map(|i| Keypair::derive(global_seed, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, index: u32) -> &Keypair {
        &self.keys[index as usize]
    }

    /// The key behind `user`, if it belongs to this ring.
    pub fn key_of(&self, user: &UserId) -> Option<&Keypair> {
        self.keys.get(user.index as usize).filter(|k| k.id == *user)
    }

    pub fn ids(&self) -> impl Iterator<Item = UserId> + '_ {
        self.keys.iter().map(|k| k.id)
    }
}

pub fn sign(key: &Keypair, msg: &[u8]) -> Signature {
    Signature(key.signing.sign(msg).to_bytes().to_vec())
}

/// Verifies `sig` over `msg` for `user`. Malformed keys or signatures yield
/// `false`.
pub fn verify(user: &UserId, msg: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&user.public_key) else {
        return false;
    };
    let Ok(bytes) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&bytes);
    vk.verify_strict(msg, &sig).is_ok()
}

/// VRF output: a pseudo-random 256-bit value and the proof that binds it to
/// a key and seed.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrfOutput {
    pub hash: Digest,
    #[serde(with = "hex_bytes")]
    pub proof: Vec<u8>,
}

impl fmt::Debug for VrfOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VrfOutput({})", self.hash.short())
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

const VRF_INPUT_TAG: &[u8] = b"dagfed/vrf-input";
const VRF_OUTPUT_TAG: &[u8] = b"dagfed/vrf-output";

fn vrf_message(seed: &[u8]) -> Vec<u8> {
    let mut msg = Vec::with_capacity(VRF_INPUT_TAG.len() + seed.len());
    msg.extend_from_slice(VRF_INPUT_TAG);
    msg.extend_from_slice(seed);
    msg
}

pub fn vrf_eval(key: &Keypair, seed: &[u8]) -> VrfOutput {
    let proof = sign(key, &vrf_message(seed)).0;
    let hash = hash_parts([VRF_OUTPUT_TAG, proof.as_slice()]);
    VrfOutput { hash, proof }
}

pub fn vrf_verify(user: &UserId, seed: &[u8], output: &VrfOutput) -> bool {
    if hash_parts([VRF_OUTPUT_TAG, output.proof.as_slice()]) != output.hash {
        return false;
    }
    verify(user, &vrf_message(seed), &Signature(output.proof.clone()))
}

/// Per-interval election seed: `hash(previous settlement digest || h)`.
pub fn interval_seed(previous_settlement: &Digest, interval: u64) -> Digest {
    hash_parts([b"dagfed/seed".as_slice(), previous_settlement.as_bytes(), &interval.to_le_bytes()])
}
