//! Embedding store: the in-memory training set and its `ATRB` binary file.
//!
//! File layout, all little-endian, no padding between sections:
//!
//! | field        | type        |
//! |--------------|-------------|
//! | magic        | `b"ATRB"`   |
//! | version      | `u32` = 1   |
//! | n            | `u64`       |
//! | d            | `u32`       |
//! | num_classes  | `u32`       |
//! | reserved     | `u32` = 0   |
//! | features     | `n*d` × f32, row-major |
//! | labels       | `n` × i32   |
//! | ids          | `n` × u64   |

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"ATRB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("invalid embedding set: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, StoreError>;

/// The training set `S`: `n` feature rows of width `d`, with labels and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    d: usize,
    num_classes: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
    ids: Vec<u64>,
}

impl EmbeddingSet {
    /// Builds a validated set from row-major features.
    pub fn new(
        features: Vec<f32>,
        d: usize,
        labels: Vec<u32>,
        ids: Vec<u64>,
        num_classes: usize,
    ) -> Result<Self> {
        if d == 0 {
            return Err(StoreError::Invalid("d must be >= 1".into()));
        }
        if num_classes < 2 {
            return Err(StoreError::Invalid("num_classes must be >= 2".into()));
        }
        let n = labels.len();
        if n == 0 {
            return Err(StoreError::Invalid("n must be >= 1".into()));
        }
        if features.len() != n * d {
            return Err(StoreError::Invalid(format!(
                "feature buffer has {} values, expected {}",
                features.len(),
                n * d
            )));
        }
        if ids.len() != n {
            return Err(StoreError::Invalid(format!(
                "{} ids for {} samples",
                ids.len(),
                n
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::Invalid(format!(
                "non-finite feature at sample {}, dim {}",
                pos / d,
                pos % d
            )));
        }
        if let Some((i, &y)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y as usize >= num_classes)
        {
            return Err(StoreError::Invalid(format!(
                "label {y} of sample {i} is outside [0, {num_classes})"
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(StoreError::Invalid(format!("duplicate id {dup}")));
        }
        Ok(Self {
            d,
            num_classes,
            features,
            labels,
            ids,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    /// Sample `i` as an evaluation target.
    pub fn target(&self, i: usize) -> TargetSample {
        TargetSample {
            feature: self.row(i).to_vec(),
            label: self.labels[i],
            id: self.ids[i],
        }
    }

    pub fn targets(&self) -> Vec<TargetSample> {
        (0..self.n()).map(|i| self.target(i)).collect()
    }

    /// Ascending indices of every sample labelled `label`.
    pub fn class_indices(&self, label: u32) -> Result<Vec<usize>> {
        if label as usize >= self.num_classes {
            return Err(StoreError::Invalid(format!(
                "class {label} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == label)
            .map(|(i, _)| i)
            .collect())
    }

    /// Rows scaled to unit ℓ2 norm; zero rows are left untouched.
    pub fn normalized(&self) -> Self {
        let mut features = self.features.clone();
        for row in features.chunks_mut(self.d) {
            normalize_in_place(row);
        }
        Self {
            features,
            ..self.clone()
        }
    }

    /// Checks that `target` can be compared against this set.
    pub fn check_target(&self, target: &TargetSample) -> Result<()> {
        if target.feature.len() != self.d {
            return Err(StoreError::Invalid(format!(
                "target has dimension {}, set has {}",
                target.feature.len(),
                self.d
            )));
        }
        if target.label as usize >= self.num_classes {
            return Err(StoreError::Invalid(format!(
                "target label {} outside [0, {})",
                target.label, self.num_classes
            )));
        }
        if target.feature.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::Invalid("non-finite target feature".into()));
        }
        Ok(())
    }

    /// Serialises to the `ATRB` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n();
        let mut out = Vec::with_capacity(HEADER_LEN + n * self.d * 4 + n * 12);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &y in &self.labels {
            out.extend_from_slice(&(y as i32).to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }

    /// Parses and validates the `ATRB` byte layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(StoreError::Format("missing ATRB magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Corrupt(format!(
                "header truncated at {} bytes",
                bytes.len()
            )));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(StoreError::Format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let d = u32_at(16) as usize;
        let num_classes = u32_at(20) as usize;
        if u32_at(24) != 0 {
            return Err(StoreError::Format(
                "reserved header field is non-zero".into(),
            ));
        }
        let payload = usize::try_from(n)
            .ok()
            .and_then(|n| {
                n.checked_mul(d)?
                    .checked_mul(4)?
                    .checked_add(n.checked_mul(12)?)
            })
            .ok_or_else(|| StoreError::Corrupt(format!("payload size overflows (n={n}, d={d})")))?;
        let expected = HEADER_LEN + payload;
        if bytes.len() < expected {
            return Err(StoreError::Corrupt(format!(
                "payload truncated: {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(StoreError::Corrupt(format!(
                "{} trailing bytes after payload",
                bytes.len() - expected
            )));
        }
        let n = n as usize;
        let mut off = HEADER_LEN;
        let features = bytes[off..off + n * d * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += n * d * 4;
        let labels = bytes[off..off + n * 4]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .map(|y| {
                u32::try_from(y).map_err(|_| StoreError::Invalid(format!("negative label {y}")))
            })
            .collect::<Result<Vec<_>>>()?;
        off += n * 4;
        let ids = bytes[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(features, d, labels, ids, num_classes)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    EmbeddingSet::from_bytes(&fs::read(path)?)
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&set.to_bytes())?;
    file.sync_all()?;
    Ok(())
}

/// An evaluation sample `z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub feature: Vec<f32>,
    pub label: u32,
    pub id: u64,
}

/// Parameters of the Gaussian-mixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub d: usize,
    pub cluster_spread: f64,
    pub inter_class_distance: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(StoreError::Invalid("num_classes must be >= 2".into()));
        }
        if self.samples_per_class == 0 || self.d == 0 {
            return Err(StoreError::Invalid(
                "samples_per_class and d must be >= 1".into(),
            ));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(StoreError::Invalid("cluster_spread must be > 0".into()));
        }
        if !(self.inter_class_distance > 0.0 && self.inter_class_distance.is_finite()) {
            return Err(StoreError::Invalid(
                "inter_class_distance must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Center of class `c`.
    ///
    /// With `d >= num_classes` the centers are scaled one-hot vectors, so every
    /// pair sits exactly `inter_class_distance` apart. Otherwise they are laid
    /// out along the first axis with that spacing.
    pub fn center(&self, c: usize) -> Vec<f64> {
        let mut center = vec![0.0; self.d];
        if self.d >= self.num_classes {
            center[c] = self.inter_class_distance / std::f64::consts::SQRT_2;
        } else {
            center[0] = c as f64 * self.inter_class_distance;
        }
        center
    }
}

/// Samples a class-major Gaussian mixture: class `c` occupies indices
/// `c*samples_per_class..(c+1)*samples_per_class`, ids equal indices.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<EmbeddingSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_classes * cfg.samples_per_class;
    let mut features = Vec::with_capacity(n * cfg.d);
    let mut labels = Vec::with_capacity(n);
    for c in 0..cfg.num_classes {
        let center = cfg.center(c);
        for _ in 0..cfg.samples_per_class {
            for &mu in &center {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push((mu + cfg.cluster_spread * z) as f32);
            }
            labels.push(c as u32);
        }
    }
    let ids = (0..n as u64).collect();
    EmbeddingSet::new(features, cfg.d, labels, ids, cfg.num_classes)
}

pub(crate) fn normalize_in_place(v: &mut [f32]) {
    let norm = v
        .iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EmbeddingSet {
        EmbeddingSet::new(vec![1.0, 2.0, 3.0], 1, vec![0, 1, 0], vec![10, 11, 12], 2).unwrap()
    }

    #[test]
    fn hand_composed_file_parses() {
        let mut b = Vec::new();
        b.extend_from_slice(b"ATRB");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u64.to_le_bytes());
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&0u32.to_le_bytes());
        for v in [0.5f32, -1.0, 2.25, 3.0, 4.0, -0.125] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&1i32.to_le_bytes());
        b.extend_from_slice(&0i32.to_le_bytes());
        b.extend_from_slice(&77u64.to_le_bytes());
        b.extend_from_slice(&5u64.to_le_bytes());

        let set = EmbeddingSet::from_bytes(&b).unwrap();
        assert_eq!(set.n(), 2);
        assert_eq!(set.d(), 3);
        assert_eq!(set.num_classes(), 2);
        assert_eq!(set.row(0), &[0.5, -1.0, 2.25]);
        assert_eq!(set.row(1), &[3.0, 4.0, -0.125]);
        assert_eq!(set.labels(), &[1, 0]);
        assert_eq!(set.ids(), &[77, 5]);
        assert_eq!(set.to_bytes(), b);
    }

    #[test]
    fn single_sample_file_size() {
        let set = EmbeddingSet::new(vec![1.0], 1, vec![0], vec![0], 2).unwrap();
        assert_eq!(set.to_bytes().len(), 28 + 4 + 4 + 8);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut b = tiny().to_bytes();
        b[0] = b'X';
        assert!(matches!(
            EmbeddingSet::from_bytes(&b),
            Err(StoreError::Format(_))
        ));
        let mut b = tiny().to_bytes();
        b[4] = 2;
        assert!(matches!(
            EmbeddingSet::from_bytes(&b),
            Err(StoreError::Format(_))
        ));
    }

    #[test]
    fn rejects_truncation() {
        let b = tiny().to_bytes();
        for cut in [10, HEADER_LEN, b.len() - 1] {
            assert!(matches!(
                EmbeddingSet::from_bytes(&b[..cut]),
                Err(StoreError::Corrupt(_))
            ));
        }
    }

    #[test]
    fn rejects_label_out_of_range() {
        let mut b = tiny().to_bytes();
        let label_off = HEADER_LEN + 3 * 4;
        b[label_off..label_off + 4].copy_from_slice(&2i32.to_le_bytes());
        assert!(matches!(
            EmbeddingSet::from_bytes(&b),
            Err(StoreError::Invalid(_))
        ));
    }

    #[test]
    fn rejects_nan_and_duplicate_ids() {
        let mut b = tiny().to_bytes();
        b[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingSet::from_bytes(&b),
            Err(StoreError::Invalid(_))
        ));
        assert!(EmbeddingSet::new(vec![1.0, 2.0], 1, vec![0, 1], vec![3, 3], 2).is_err());
    }

    #[test]
    fn class_indices_basic() {
        let set = tiny();
        assert_eq!(set.class_indices(0).unwrap(), vec![0, 2]);
        assert_eq!(set.class_indices(1).unwrap(), vec![1]);
        assert!(set.class_indices(2).is_err());
        let set = EmbeddingSet::new(vec![1.0, 2.0], 1, vec![0, 0], vec![0, 1], 3).unwrap();
        assert!(set.class_indices(2).unwrap().is_empty());
    }

    #[test]
    fn synthetic_balanced_and_deterministic() {
        let cfg = SyntheticConfig {
            num_classes: 3,
            samples_per_class: 7,
            d: 4,
            cluster_spread: 0.3,
            inter_class_distance: 5.0,
            seed: 9,
        };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        for c in 0..3 {
            assert_eq!(a.class_indices(c).unwrap().len(), 7);
        }
        let other = generate_synthetic(&SyntheticConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.features(), other.features());
    }

    #[test]
    fn synthetic_vanishing_spread_collapses_to_centers() {
        let cfg = SyntheticConfig {
            num_classes: 3,
            samples_per_class: 4,
            d: 2,
            cluster_spread: 1e-60,
            inter_class_distance: 2.0,
            seed: 1,
        };
        let set = generate_synthetic(&cfg).unwrap();
        for i in 0..set.n() {
            let center: Vec<f32> = cfg
                .center(set.label(i) as usize)
                .iter()
                .map(|&v| v as f32)
                .collect();
            assert_eq!(set.row(i), center.as_slice());
        }
    }

    #[test]
    fn centers_respect_distance() {
        for d in [2, 5, 10] {
            let cfg = SyntheticConfig {
                num_classes: 5,
                samples_per_class: 1,
                d,
                cluster_spread: 1.0,
                inter_class_distance: 3.0,
                seed: 0,
            };
            for a in 0..5 {
                for b in a + 1..5 {
                    let dist: f64 = cfg
                        .center(a)
                        .iter()
                        .zip(cfg.center(b))
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(dist >= 3.0 - 1e-12, "d={d} classes {a},{b}: {dist}");
                }
            }
        }
    }

    #[test]
    fn invalid_synthetic_config() {
        let cfg = SyntheticConfig {
            num_classes: 2,
            samples_per_class: 2,
            d: 2,
            cluster_spread: 0.0,
            inter_class_distance: 1.0,
            seed: 0,
        };
        assert!(generate_synthetic(&cfg).is_err());
    }
}
