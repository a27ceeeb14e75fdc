//! Linear datamodeling score.
//!
//! For random `α`-fraction subsets `S_j` of the training set, the LDS of a
//! score vector `τ` at target `z` is the Spearman correlation between the
//! retrained correct-class margins `f_θ(S_j)(z)` and the additive predictions
//! `τ·1_{S_j}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::ScoreVector;
use crate::oracle::{Classifier, Oracle, OracleError, TrainConfig, TrainingView};
use crate::store::{EmbeddingSet, TargetSample};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_SUBSETS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdsError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("training on subset {subset} failed: {source}")]
    Subset { subset: usize, source: OracleError },
    #[error("margin evaluation failed: {0}")]
    Oracle(#[from] OracleError),
}

type Result<T> = std::result::Result<T, LdsError>;

/// Indicator vector `1_{S_j}` of one random subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetMask {
    pub mask: Vec<bool>,
    pub subset_seed: u64,
}

impl SubsetMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// A rank correlation, flagged when either input had no rank variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdsResult {
    pub target_ids: Vec<u64>,
    pub per_target_rho: Vec<f64>,
    pub mean_rho: f64,
    pub m: usize,
    pub alpha: f64,
    pub warnings: Vec<String>,
}

/// Size of each subset, `⌊α·n⌋`.
pub fn subset_size(n: usize, alpha: f64) -> usize {
    (alpha * n as f64).floor() as usize
}

/// `m` independent uniform subsets of size `⌊α·n⌋`; subset `j` is drawn
/// from a seed derived from `(seed, j)`.
pub fn sample_subsets(n: usize, alpha: f64, m: usize, seed: u64) -> Result<Vec<SubsetMask>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LdsError::Params(format!("alpha {alpha} outside (0, 1)")));
    }
    if m < 2 {
        return Err(LdsError::Params(format!("need m >= 2 subsets, got {m}")));
    }
    let size = subset_size(n, alpha);
    if size == 0 || size == n {
        return Err(LdsError::Params(format!(
            "subset size floor({alpha}·{n}) = {size} must lie strictly between 0 and n"
        )));
    }
    Ok((0..m as u64)
        .map(|j| {
            let subset_seed = crate::seed::derive(seed, &[j]);
            let mut rng = ChaCha8Rng::seed_from_u64(subset_seed);
            let mut mask = vec![false; n];
            for i in rand::seq::index::sample(&mut rng, n, size) {
                mask[i] = true;
            }
            SubsetMask { mask, subset_seed }
        })
        .collect())
}

/// Correct-class margins, `targets × masks`. The model for mask `j` is
/// trained once (seed derived from `cfg.seed` and the mask's seed) and
/// evaluated at every target.
pub fn subset_margins<O: Oracle>(
    oracle: &O,
    set: &EmbeddingSet,
    masks: &[SubsetMask],
    targets: &[TargetSample],
    cfg: &TrainConfig,
) -> Result<Vec<Vec<f64>>> {
    for mask in masks {
        if mask.mask.len() != set.n() {
            return Err(LdsError::Length {
                expected: set.n(),
                got: mask.mask.len(),
            });
        }
    }
    let columns: Vec<Vec<f64>> = masks
        .par_iter()
        .enumerate()
        .map(|(j, mask)| {
            let view = TrainingView::masked(set, &mask.mask)
                .map_err(|source| LdsError::Subset { subset: j, source })?;
            let seed = crate::seed::derive(cfg.seed, &[mask.subset_seed]);
            let model = oracle
                .train(&view, &cfg.with_seed(seed))
                .map_err(|source| LdsError::Subset { subset: j, source })?;
            targets
                .iter()
                .map(|t| model.margin(t).map_err(LdsError::from))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..targets.len())
        .map(|t| columns.iter().map(|col| col[t]).collect())
        .collect())
}

/// `τ·1_{S_j}` for each mask.
pub fn additive_predictions(tau: &[f64], masks: &[SubsetMask]) -> Result<Vec<f64>> {
    masks
        .iter()
        .map(|m| {
            if m.mask.len() != tau.len() {
                return Err(LdsError::Length {
                    expected: tau.len(),
                    got: m.mask.len(),
                });
            }
            Ok(tau
                .iter()
                .zip(&m.mask)
                .filter(|(_, &inside)| inside)
                .map(|(t, _)| t)
                .sum())
        })
        .collect()
}

/// Spearman correlation between one target's margins and the additive
/// predictions of `tau`.
pub fn lds_score(
    tau: &ScoreVector,
    margins_row: &[f64],
    masks: &[SubsetMask],
) -> Result<Correlation> {
    if margins_row.len() != masks.len() {
        return Err(LdsError::Length {
            expected: masks.len(),
            got: margins_row.len(),
        });
    }
    let predicted = additive_predictions(&tau.scores, masks)?;
    spearman(margins_row, &predicted)
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) → mean 1-based rank
        let mean = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks. Zero rank variance in either input
/// yields `rho = 0` flagged as degenerate.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(LdsError::Length {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(LdsError::Params("spearman needs at least 2 points".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(LdsError::Params("NaN input to spearman".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let mean = (a.len() + 1) as f64 / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(Correlation {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        rho: (cov / (va * vb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// End-to-end LDS for a batch of targets with precomputed scores.
pub fn lds<O: Oracle>(
    oracle: &O,
    set: &EmbeddingSet,
    targets: &[TargetSample],
    taus: &[ScoreVector],
    masks: &[SubsetMask],
    cfg: &TrainConfig,
    alpha: f64,
) -> Result<LdsResult> {
    if targets.len() != taus.len() {
        return Err(LdsError::Length {
            expected: targets.len(),
            got: taus.len(),
        });
    }
    if targets.is_empty() {
        return Err(LdsError::Params("no targets".into()));
    }
    let margins = subset_margins(oracle, set, masks, targets, cfg)?;
    let mut warnings = Vec::new();
    let mut per_target_rho = Vec::with_capacity(targets.len());
    for ((t, tau), row) in targets.iter().zip(taus).zip(&margins) {
        let c = lds_score(tau, row, masks)?;
        if c.degenerate {
            warnings.push(format!(
                "target {}: constant margins or predictions, rho set to 0",
                t.id
            ));
        }
        per_target_rho.push(c.rho);
    }
    let mean_rho = per_target_rho.iter().sum::<f64>() / per_target_rho.len() as f64;
    Ok(LdsResult {
        target_ids: targets.iter().map(|t| t.id).collect(),
        per_target_rho,
        mean_rho,
        m: masks.len(),
        alpha,
        warnings,
    })
}
