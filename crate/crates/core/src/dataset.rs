//! Datasets, non-IID shard construction, and feature obfuscation.
//!
//! Samples are stored row-major in one flat buffer. Images are 8x8
//! grayscale grids scaled to [0, 1] for the built-in digit set; the
//! synthetic blob set uses the same geometry so the image-based attacks
//! (corner patches) apply to both.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, Digest};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("feature buffer has {got} values, expected {expected}")]
    FeatureLength { got: usize, expected: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: u32 },
    #[error("dataset of {size} samples is too small to split at fraction {fraction}")]
    TooSmallToSplit { size: usize, fraction: f64 },
    #[error("train fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("non-IID sharding needs a sample count divisible by {required} (2 x {shards} shards); got {size}")]
    ShardDivisibility { size: usize, shards: usize, required: usize },
    #[error("shard count must be positive")]
    NoShards,
    #[error("noise standard deviation must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Height/width of image-shaped features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    dim: usize,
    classes: u32,
    image: Option<ImageShape>,
}

impl Dataset {
    pub fn new(dim: usize, classes: u32, features: Vec<f64>, labels: Vec<u32>) -> Result<Self, DatasetError> {
        if features.len() != dim * labels.len() {
            return Err(DatasetError::FeatureLength {
                got: features.len(),
                expected: dim * labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(DatasetError::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
            image: None,
        })
    }

    pub fn with_image_shape(mut self, height: usize, width: usize) -> Self {
        if height * width == self.dim {
            self.image = Some(ImageShape { height, width });
        }
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> u32 {
        self.classes
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn set_label(&mut self, i: usize, label: u32) {
        assert!(label < self.classes, "label out of range");
        self.labels[i] = label;
    }

    pub fn raw_features(&self) -> &[f64] {
        &self.features
    }

    /// New dataset with the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            dim: self.dim,
            classes: self.classes,
            image: self.image,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.classes as usize];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Commitment over the binary encoding.
    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }

    /// Binary cache format: magic, sample count, dim, classes, image shape,
    /// then per sample `dim` little-endian f64 features and a u32 label.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.features.len() * 8 + self.labels.len() * 4);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.classes.to_le_bytes());
        let (h, w) = self.image.map(|s| (s.height, s.width)).unwrap_or((0, 0));
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        for i in 0..self.len() {
            for v in self.features(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&self.labels[i].to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, DatasetError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != DATASET_MAGIC {
            return Err(DatasetError::Malformed("bad magic".into()));
        }
        let n = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let classes = r.u32()?;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..dim {
                features.push(r.f64()?);
            }
            labels.push(r.u32()?);
        }
        if r.pos != bytes.len() {
            return Err(DatasetError::Malformed("trailing bytes".into()));
        }
        let ds = Dataset::new(dim, classes, features, labels)?;
        Ok(if h > 0 { ds.with_image_shape(h, w) } else { ds })
    }

    /// CSV: feature columns followed by an integer label column, no header.
    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.features(i).iter().map(|v| v.to_string()).collect();
            row.push(self.labels[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. `classes` of `None`
    /// infers the class count as `max label + 1`.
    pub fn read_csv(path: &Path, classes: Option<u32>) -> Result<Dataset, DatasetError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv_from(file, classes)
    }

    pub fn read_csv_from<R: Read>(reader: R, classes: Option<u32>) -> Result<Dataset, DatasetError> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(DatasetError::Malformed("row needs features and a label".into()));
            }
            let d = rec.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(DatasetError::Malformed("ragged rows".into()));
            }
            for field in rec.iter().take(d) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| DatasetError::Malformed(format!("bad feature {field:?}")))?;
                features.push(v);
            }
            let label_field = rec.get(d).unwrap_or_default().trim();
            let label: u32 = label_field
                .parse()
                .map_err(|_| DatasetError::Malformed(format!("bad label {label_field:?}")))?;
            labels.push(label);
        }
        let dim = dim.unwrap_or(0);
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let ds = Dataset::new(dim, classes, features, labels)?;
        let side = (dim as f64).sqrt() as usize;
        Ok(if side * side == dim && dim > 0 {
            ds.with_image_shape(side, side)
        } else {
            ds
        })
    }

    pub fn write_binary(&self, path: &Path) -> Result<(), DatasetError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Dataset, DatasetError> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }
}

const DATASET_MAGIC: &[u8; 4] = b"DFDS";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(DatasetError::Malformed("truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

static DIGITS_GZ: &[u8] = include_bytes!("../data/digits.csv.gz");

/// The 8x8 handwritten digit set (1,797 samples, 10 classes), features
/// scaled from 0..16 to [0, 1].
pub fn digits() -> Dataset {
    let mut raw = String::new();
    flate2::read::GzDecoder::new(DIGITS_GZ)
        .read_to_string(&mut raw)
        .expect("embedded digit data decompresses");
    let mut ds = Dataset::read_csv_from(raw.as_bytes(), Some(10)).expect("embedded digit data parses");
    for v in ds.features.iter_mut() {
        *v /= 16.0;
    }
    ds
}

/// Parameters for the synthetic Gaussian-blob set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub samples: usize,
    pub classes: u32,
    /// Side length of the square feature grid.
    pub side: usize,
    /// Standard deviation of samples around their class centre.
    pub spread: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            classes: 10,
            side: 8,
            spread: 0.35,
        }
    }
}

/// Synthetic blobs: one random centre in [0, 1]^d per class, samples drawn
/// around it and clamped to [0, 1]. Labels cycle so classes are balanced.
pub fn blobs(spec: &BlobSpec, seed: u64) -> Dataset {
    let dim = spec.side * spec.side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..spec.classes).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
    let noise = Normal::new(0.0, spec.spread).expect("finite spread");
    let mut features = Vec::with_capacity(spec.samples * dim);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let label = (i as u32) % spec.classes;
        for &c in &centres[label as usize] {
            features.push((c + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
        labels.push(label);
    }
    Dataset::new(dim, spec.classes, features, labels)
        .expect("consistent blob data")
        .with_image_shape(spec.side, spec.side)
}

/// Deterministic shuffled partition into `(train, test)`.
pub fn split_train_test(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    let (train_idx, test_idx) = split_indices(data.len(), train_fraction, seed)?;
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// Index form of [`split_train_test`].
pub fn split_indices(size: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    let n_train = (size as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= size {
        return Err(DatasetError::TooSmallToSplit {
            size,
            fraction: train_fraction,
        });
    }
    let mut idx: Vec<usize> = (0..size).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Per-shard sample index lists. Each shard holds its label-concentrated
/// half first, then its label-uniform half.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub shard_count: usize,
    pub samples_per_shard: usize,
    pub shards: Vec<Vec<usize>>,
}

impl ShardPlan {
    pub fn concentrated_half(&self, shard: usize) -> &[usize] {
        &self.shards[shard][..self.samples_per_shard / 2]
    }

    pub fn uniform_half(&self, shard: usize) -> &[usize] {
        &self.shards[shard][self.samples_per_shard / 2..]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("shard plan serializes")
    }
}

/// Non-IID sharding: shuffle, split into two equal pools, sort the first by
/// label and cut it into `shard_count` contiguous pieces, cut the second
/// into random pieces, then pair one piece from each pool per shard.
pub fn build_non_iid_shards(train: &Dataset, shard_count: usize, seed: u64) -> Result<ShardPlan, DatasetError> {
    if shard_count == 0 {
        return Err(DatasetError::NoShards);
    }
    let n = train.len();
    let required = 2 * shard_count;
    if n == 0 || !n.is_multiple_of(required) {
        return Err(DatasetError::ShardDivisibility {
            size: n,
            shards: shard_count,
            required,
        });
    }
    let half = n / required;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let uniform_pool = idx.split_off(n / 2);
    let mut sorted_pool = idx;
    sorted_pool.sort_by_key(|&i| (train.label(i), i));

    let concentrated: Vec<&[usize]> = sorted_pool.chunks(half).collect();
    let uniform: Vec<&[usize]> = uniform_pool.chunks(half).collect();
    let mut order_c: Vec<usize> = (0..shard_count).collect();
    let mut order_u: Vec<usize> = (0..shard_count).collect();
    order_c.shuffle(&mut rng);
    order_u.shuffle(&mut rng);

    let shards = order_c
        .iter()
        .zip(&order_u)
        .map(|(&c, &u)| {
            let mut s = concentrated[c].to_vec();
            s.extend_from_slice(uniform[u]);
            s
        })
        .collect();
    Ok(ShardPlan {
        shard_count,
        samples_per_shard: 2 * half,
        shards,
    })
}

/// Adds zero-mean Gaussian noise to every feature. Labels and sample count
/// are untouched.
pub fn obfuscate(data: &Dataset, noise_std: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(DatasetError::BadNoise(noise_std));
    }
    let mut out = data.clone();
    if noise_std == 0.0 {
        return Ok(out);
    }
    let noise = Normal::new(0.0, noise_std).expect("validated std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.features.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    Ok(out)
}

/// Data-quality degradation: Gaussian noise on a random `sample_fraction`
/// of the samples.
pub fn perturb_samples(data: &Dataset, sample_fraction: f64, noise_std: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(DatasetError::BadNoise(noise_std));
    }
    let mut out = data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let count = (data.len() as f64 * sample_fraction.clamp(0.0, 1.0)).round() as usize;
    if noise_std == 0.0 {
        return Ok(out);
    }
    let noise = Normal::new(0.0, noise_std).expect("validated std");
    for &i in &idx[..count] {
        for v in out.features_mut(i) {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, classes: u32) -> Dataset {
        let labels: Vec<u32> = (0..n as u32).map(|i| i % classes).collect();
        let features: Vec<f64> = (0..n * 4).map(|i| i as f64 / 10.0).collect();
        Dataset::new(4, classes, features, labels).unwrap()
    }

    #[test]
    fn test_digits_shape() {
        let d = digits();
        assert_eq!(d.len(), 1797);
        assert_eq!(d.dim(), 64);
        assert_eq!(d.classes(), 10);
        assert!(d.raw_features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.image_shape(), Some(ImageShape { height: 8, width: 8 }));
    }

    #[test]
    fn test_split_sizes() {
        let (a, b) = split_indices(60_000, 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (48_000, 12_000));
        let (tr, te) = split_train_test(&tiny(10, 2), 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
    }

    #[test]
    fn test_split_deterministic_and_partition() {
        let (a1, b1) = split_indices(100, 0.7, 9).unwrap();
        let (a2, b2) = split_indices(100, 0.7, 9).unwrap();
        assert_eq!((a1.clone(), b1.clone()), (a2, b2));
        let mut all: Vec<usize> = a1.into_iter().chain(b1).collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn test_split_errors() {
        assert!(matches!(split_indices(1, 0.8, 0), Err(DatasetError::TooSmallToSplit { .. })));
        assert!(matches!(split_indices(10, 1.0, 0), Err(DatasetError::BadFraction(_))));
        assert!(matches!(split_indices(10, 0.0, 0), Err(DatasetError::BadFraction(_))));
    }

    #[test]
    fn test_paper_scale_shard_geometry() {
        // 48,000 samples into 120 shards of 400 (200 + 200).
        let labels: Vec<u32> = (0..48_000u32).map(|i| i % 10).collect();
        let ds = Dataset::new(1, 10, vec![0.0; 48_000], labels).unwrap();
        let plan = build_non_iid_shards(&ds, 120, 5).unwrap();
        assert_eq!(plan.shards.len(), 120);
        assert_eq!(plan.samples_per_shard, 400);
        assert!(plan.shards.iter().all(|s| s.len() == 400));
        assert_eq!(plan.concentrated_half(0).len(), 200);
        let mut seen = vec![false; 48_000];
        for s in &plan.shards {
            for &i in s {
                assert!(!seen[i], "shards overlap");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn test_tiny_shards_concentrated() {
        let ds = tiny(8, 4);
        let plan = build_non_iid_shards(&ds, 2, 0).unwrap();
        for s in 0..2 {
            let mut labels: Vec<u32> = plan.concentrated_half(s).iter().map(|&i| ds.label(i)).collect();
            labels.dedup();
            labels.sort();
            labels.dedup();
            assert!(labels.len() <= 2);
        }
    }

    #[test]
    fn test_shard_divisibility_error() {
        let err = build_non_iid_shards(&tiny(10, 2), 3, 0).unwrap_err();
        assert!(matches!(err, DatasetError::ShardDivisibility { required: 6, .. }));
    }

    #[test]
    fn test_obfuscate_zero_noise_identity() {
        let ds = tiny(20, 3);
        assert_eq!(obfuscate(&ds, 0.0, 4).unwrap(), ds);
        assert!(obfuscate(&ds, -1.0, 4).is_err());
    }

    #[test]
    fn test_obfuscate_keeps_labels_and_is_seeded() {
        let ds = tiny(20, 3);
        let a = obfuscate(&ds, 0.1, 4).unwrap();
        let b = obfuscate(&ds, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels(), ds.labels());
        assert_eq!(a.len(), ds.len());
        assert_ne!(a.raw_features(), ds.raw_features());
    }

    #[test]
    fn test_binary_roundtrip() {
        let ds = digits().subset(&[0, 5, 9]);
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back, ds);
        assert!(Dataset::from_bytes(&ds.to_bytes()[..20]).is_err());
    }

    #[test]
    fn test_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = digits().subset(&[1, 2, 3, 4]);
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, Some(10)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn test_label_range_checked() {
        assert!(matches!(
            Dataset::new(1, 2, vec![0.0], vec![2]),
            Err(DatasetError::LabelOutOfRange { .. })
        ));
    }
}
