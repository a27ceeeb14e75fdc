//! Attribution scores `τ(z_t, S)` from feature-space similarity.
//!
//! Every method reports "higher = more positive influence": distances are
//! negated. Rankings break ties by ascending training index.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::esvm::{self, EsvmError, EsvmParams};
use crate::oracle::{OracleError, SoftmaxModel};
use crate::store::{EmbeddingSet, StoreError, TargetSample};

/// Guards the zero-distance case of signed inverse-distance scores.
pub const SIGNED_EPS: f64 = 1e-12;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("exemplar svm: {0}")]
    Esvm(#[from] EsvmError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("target class {0} has no training samples")]
    EmptyClass(u32),
    #[error("expected {expected} scores, got {got}")]
    Length { expected: usize, got: usize },
    #[error("{0}")]
    Precondition(String),
}

type Result<T> = std::result::Result<T, AttributionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    L2,
    Cosine,
    Esvm,
    GradCos,
    SignedSparseL2,
    /// Uniformly random scores; the brittleness baseline.
    Random,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::L2 => "l2",
            Method::Cosine => "cosine",
            Method::Esvm => "esvm",
            Method::GradCos => "gradcos",
            Method::SignedSparseL2 => "signed-sparse",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "l2" => Method::L2,
            "cosine" => Method::Cosine,
            "esvm" => Method::Esvm,
            "gradcos" => Method::GradCos,
            "signed-sparse" => Method::SignedSparseL2,
            "random" => Method::Random,
            other => return Err(format!("unknown method '{other}'")),
        })
    }
}

/// One score per training sample for a single target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub method: Method,
    pub target_id: u64,
    /// Degenerate inputs encountered while scoring (e.g. zero-norm vectors).
    pub warnings: Vec<String>,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, method: Method, target_id: u64) -> Self {
        Self {
            scores,
            method,
            target_id,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankFilter {
    SameClass,
    All,
}

impl FromStr for RankFilter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "same-class" => Ok(RankFilter::SameClass),
            "all" => Ok(RankFilter::All),
            other => Err(format!("unknown filter '{other}'")),
        }
    }
}

/// The top-`k` list `I_attr`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedIndices {
    pub indices: Vec<usize>,
    pub k: usize,
    pub filter: RankFilter,
}

fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `−‖x_i − x_t‖₂` for every training sample.
pub fn l2_scores(set: &EmbeddingSet, target: &TargetSample) -> Result<ScoreVector> {
    set.check_target(target)?;
    let scores = (0..set.n())
        .map(|i| -l2_distance(set.row(i), &target.feature))
        .collect();
    Ok(ScoreVector::new(scores, Method::L2, target.id))
}

/// Cosine similarity; any zero-norm vector scores −1 and records a warning.
pub fn cosine_scores(set: &EmbeddingSet, target: &TargetSample) -> Result<ScoreVector> {
    set.check_target(target)?;
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let t_norm = norm(&target.feature);
    let mut out = ScoreVector::new(Vec::with_capacity(set.n()), Method::Cosine, target.id);
    if t_norm == 0.0 {
        out.warnings
            .push("zero-norm target; all cosine scores set to -1".into());
    }
    for i in 0..set.n() {
        let row = set.row(i);
        let r_norm = norm(row);
        if t_norm == 0.0 {
            out.scores.push(-1.0);
        } else if r_norm == 0.0 {
            out.warnings
                .push(format!("zero-norm training row {i}; score set to -1"));
            out.scores.push(-1.0);
        } else {
            let dot: f64 = row
                .iter()
                .zip(&target.feature)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            out.scores.push((dot / (r_norm * t_norm)).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Exemplar-SVM decision values for same-class samples, `−∞` elsewhere.
///
/// The target is the lone positive; every training sample sharing its label
/// is a negative.
pub fn esvm_scores(
    set: &EmbeddingSet,
    target: &TargetSample,
    params: &EsvmParams,
) -> Result<ScoreVector> {
    set.check_target(target)?;
    let same = set.class_indices(target.label)?;
    if same.is_empty() {
        return Err(AttributionError::EmptyClass(target.label));
    }
    let negatives: Vec<&[f32]> = same.iter().map(|&i| set.row(i)).collect();
    let h = esvm::train_exemplar(&target.feature, &negatives, params)?;
    let values = esvm::decision_values(&h, set, &same)?;
    let mut scores = vec![f64::NEG_INFINITY; set.n()];
    for (&i, v) in same.iter().zip(values) {
        scores[i] = v;
    }
    let mut out = ScoreVector::new(scores, Method::Esvm, target.id);
    if !h.converged {
        out.warnings.push(format!(
            "exemplar svm hit the iteration cap (objective {})",
            h.final_objective
        ));
    }
    Ok(out)
}

/// Cosine between the loss gradient at the target and at each training
/// sample, over all parameters of `model`.
pub fn gradcos_scores(
    model: &SoftmaxModel,
    set: &EmbeddingSet,
    target: &TargetSample,
) -> Result<ScoreVector> {
    set.check_target(target)?;
    let g_t = model.sample_gradient(&target.feature, target.label)?;
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let t_norm = norm(&g_t);
    let mut out = ScoreVector::new(Vec::with_capacity(set.n()), Method::GradCos, target.id);
    if t_norm == 0.0 {
        out.warnings
            .push("zero target gradient; all scores set to -1".into());
    }
    for i in 0..set.n() {
        let g_i = model.sample_gradient(set.row(i), set.label(i))?;
        let i_norm = norm(&g_i);
        if t_norm == 0.0 {
            out.scores.push(-1.0);
        } else if i_norm == 0.0 {
            out.warnings.push(format!(
                "zero gradient at training row {i}; score set to -1"
            ));
            out.scores.push(-1.0);
        } else {
            let dot: f64 = g_t.iter().zip(&g_i).map(|(a, b)| a * b).sum();
            out.scores.push((dot / (t_norm * i_norm)).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Uniform random scores in `[0, 1)`, derived from `seed` and the target id.
pub fn random_scores(set: &EmbeddingSet, target: &TargetSample, seed: u64) -> Result<ScoreVector> {
    set.check_target(target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[target.id]));
    let mut perm: Vec<usize> = (0..set.n()).collect();
    perm.shuffle(&mut rng);
    let mut scores = vec![0.0; set.n()];
    for (pos, &i) in perm.iter().enumerate() {
        scores[i] = 1.0 - pos as f64 / set.n() as f64;
    }
    Ok(ScoreVector::new(scores, Method::Random, target.id))
}

/// Inverse signed ℓ2 distance, keeping only the `⌈keep_fraction·n⌉` entries
/// of largest magnitude. The sign is `+` for samples sharing the target label.
pub fn signed_sparse_scores(
    set: &EmbeddingSet,
    target: &TargetSample,
    base: &ScoreVector,
    keep_fraction: f64,
) -> Result<ScoreVector> {
    set.check_target(target)?;
    if base.method != Method::L2 {
        return Err(AttributionError::Precondition(format!(
            "signed sparse scores need l2 base scores, got {}",
            base.method
        )));
    }
    if base.len() != set.n() {
        return Err(AttributionError::Length {
            expected: set.n(),
            got: base.len(),
        });
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(AttributionError::Precondition(format!(
            "keep_fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let raw: Vec<f64> = (0..set.n())
        .map(|i| {
            let sign = if set.label(i) == target.label {
                1.0
            } else {
                -1.0
            };
            sign / (-base.scores[i] + SIGNED_EPS)
        })
        .collect();
    let keep = keep_count(keep_fraction, set.n());
    let mut order: Vec<usize> = (0..set.n()).collect();
    order.sort_by(|&a, &b| raw[b].abs().total_cmp(&raw[a].abs()).then(a.cmp(&b)));
    let mut scores = vec![0.0; set.n()];
    for &i in &order[..keep] {
        scores[i] = raw[i];
    }
    Ok(ScoreVector::new(scores, Method::SignedSparseL2, target.id))
}

fn keep_count(fraction: f64, n: usize) -> usize {
    // Nudge below the ceiling so that e.g. 0.05·100 yields 5 despite rounding.
    (((fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Sorts candidates by descending score (ascending index on ties) and keeps `k`.
pub fn rank(
    scores: &ScoreVector,
    set: &EmbeddingSet,
    target: &TargetSample,
    filter: RankFilter,
    k: usize,
) -> Result<RankedIndices> {
    if k == 0 {
        return Err(AttributionError::Precondition("k must be >= 1".into()));
    }
    if scores.len() != set.n() {
        return Err(AttributionError::Length {
            expected: set.n(),
            got: scores.len(),
        });
    }
    let mut candidates = match filter {
        RankFilter::SameClass => set.class_indices(target.label)?,
        RankFilter::All => (0..set.n()).collect(),
    };
    let s = &scores.scores;
    candidates.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    candidates.truncate(k);
    Ok(RankedIndices {
        indices: candidates,
        k,
        filter,
    })
}
