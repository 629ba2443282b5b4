//! Named tensor bundles and their content-addressed blob encoding.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::crypto::{hash, Digest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; len],
        }
    }
}

/// Ordered tensors of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    tensors: Vec<Tensor>,
}

impl ModelWeights {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        for t in &tensors {
            let expected: usize = t.shape.iter().product();
            if t.values.len() != expected {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {} has {} values for shape {:?}",
                    t.name,
                    t.values.len(),
                    t.shape
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteWeights(t.name.clone()));
            }
        }
        Ok(Self { tensors })
    }

    /// Single unnamed vector; handy for small hand-checked examples.
    pub fn from_flat(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            tensors: vec![Tensor {
                name: "w".into(),
                shape: vec![n],
                values,
            }],
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn same_shape(&self, other: &ModelWeights) -> bool {
        self.tensors.len() == other.tensors.len() && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape == b.shape)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.values.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Blob layout: u32 tensor count, then per tensor a u32 name length,
    /// name bytes, u32 rank, u64 dims, and little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.param_count() * 8);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], ModelError> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| ModelError::MalformedBlob("truncated".into()))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let count = u32_of(take(4)?);
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u32_of(take(4)?);
            let name =
                String::from_utf8(take(name_len)?.to_vec()).map_err(|_| ModelError::MalformedBlob("tensor name is not UTF-8".into()))?;
            let rank = u32_of(take(4)?);
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| ModelError::MalformedBlob("shape overflow".into()))?;
            let raw = take(
                len.checked_mul(8)
                    .ok_or_else(|| ModelError::MalformedBlob("shape overflow".into()))?,
            )?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor { name, shape, values });
        }
        if pos != bytes.len() {
            return Err(ModelError::MalformedBlob("trailing bytes".into()));
        }
        ModelWeights::new(tensors)
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_blob_roundtrip() {
        let w = ModelWeights::new(vec![
            Tensor {
                name: "a".into(),
                shape: vec![2, 2],
                values: vec![1.0, -2.5, 3.0, 0.0],
            },
            Tensor {
                name: "b".into(),
                shape: vec![1],
                values: vec![7.0],
            },
        ])
        .unwrap();
        let bytes = w.to_bytes();
        assert_eq!(ModelWeights::from_bytes(&bytes).unwrap(), w);
        assert!(ModelWeights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(w.digest(), ModelWeights::from_bytes(&bytes).unwrap().digest());
    }

    #[test]
    fn test_rejects_non_finite() {
        let t = Tensor {
            name: "x".into(),
            shape: vec![1],
            values: vec![f64::NAN],
        };
        assert!(matches!(ModelWeights::new(vec![t]), Err(ModelError::NonFiniteWeights(_))));
    }

    #[test]
    fn test_rejects_bad_shape() {
        let t = Tensor {
            name: "x".into(),
            shape: vec![3],
            values: vec![0.0],
        };
        assert!(ModelWeights::new(vec![t]).is_err());
    }
}
