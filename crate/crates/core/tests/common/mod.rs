//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use simattr::oracle::{Classifier, Oracle, OracleError, TrainConfig, TrainingView};
use simattr::{EmbeddingSet, EsvmParams, SoftmaxModel, TargetSample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize, scale: f64) -> Vec<Vec<f32>> {
    let normal = Normal::new(0.0, scale).unwrap();
    (0..rows)
        .map(|_| (0..d).map(|_| normal.sample(rng) as f32).collect())
        .collect()
}

/// Random store with every class populated and shuffled ids.
pub fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> EmbeddingSet {
    let features: Vec<f32> = gaussian_rows(rng, n, d, 1.0).concat();
    let labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    EmbeddingSet::new(features, d, labels, ids, classes).unwrap()
}

// ---------------------------------------------------------------------------
// Exemplar SVM reference: accelerated projected gradient on the dual.

/// Primal ESVM objective at `(w, b)`; row 0 of `rows` is the positive.
pub fn esvm_primal(rows: &[Vec<f64>], c: &[f64], y: &[f64], w: &[f64], b: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = rows
        .iter()
        .zip(c)
        .zip(y)
        .map(|((x, ci), yi)| {
            let f: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            ci * (1.0 - yi * f).max(0.0)
        })
        .sum();
    reg + loss
}

/// The objective is piecewise linear and convex in `b`, so its minimum sits
/// at one of the hinge breakpoints `b = y_i − w·x_i`.
pub fn best_primal_for_w(rows: &[Vec<f64>], c: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    rows.iter()
        .zip(y)
        .map(|(x, yi)| yi - x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .map(|b| (esvm_primal(rows, c, y, w, b), b))
        .fold((f64::INFINITY, 0.0), |best, cand| {
            if cand.0 < best.0 {
                cand
            } else {
                best
            }
        })
}

// Euclidean projection onto {0 ≤ α ≤ c, yᵀα = 0}: α_i = clip(v_i − λ·y_i),
// with λ found by bisection on the monotone map λ ↦ yᵀα(λ).
fn project(v: &[f64], y: &[f64], c: &[f64]) -> Vec<f64> {
    let at = |lambda: f64| -> (Vec<f64>, f64) {
        let a: Vec<f64> = v
            .iter()
            .zip(y)
            .zip(c)
            .map(|((vi, yi), ci)| (vi - lambda * yi).clamp(0.0, *ci))
            .collect();
        let s = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
        (a, s)
    };
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max)
        + c.iter().fold(0.0, |m: f64, x| m.max(*x))
        + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 * span {
            break;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Reference ESVM solution `(objective, w, b)` after `iters` accelerated
/// projected-gradient steps on the dual, with an exact bias for the final `w`.
pub fn esvm_reference(
    positive: &[f32],
    negatives: &[&[f32]],
    params: &EsvmParams,
    iters: usize,
) -> (f64, Vec<f64>, f64) {
    let rows: Vec<Vec<f64>> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let m = rows.len();
    let d = rows[0].len();
    let mut y = vec![-1.0; m];
    y[0] = 1.0;
    let mut c = vec![params.c_neg; m];
    c[0] = params.c_pos;

    // Q_ij = y_i y_j x_i·x_j
    let q: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    y[i] * y[j]
                        * rows[i]
                            .iter()
                            .zip(&rows[j])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();
    // Lipschitz constant bound: Frobenius norm of Q.
    let lip = q
        .iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    let step = 1.0 / lip;

    let mut alpha = vec![0.0; m];
    let mut z = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad: Vec<f64> = (0..m)
            .map(|i| q[i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() - 1.0)
            .collect();
        let v: Vec<f64> = z.iter().zip(&grad).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&v, &y, &c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&alpha)
            .map(|(n, a)| n + (t - 1.0) / t_next * (n - a))
            .collect();
        alpha = next;
        t = t_next;
    }
    let mut w = vec![0.0; d];
    for i in 0..m {
        for (wk, xk) in w.iter_mut().zip(&rows[i]) {
            *wk += alpha[i] * y[i] * xk;
        }
    }
    let (obj, b) = best_primal_for_w(&rows, &c, &y, &w);
    (obj, w, b)
}

pub struct EsvmInstance {
    pub positive: Vec<f32>,
    pub negatives: Vec<Vec<f32>>,
    pub params: EsvmParams,
}

impl EsvmInstance {
    pub fn negatives(&self) -> Vec<&[f32]> {
        self.negatives.iter().map(|r| r.as_slice()).collect()
    }
}

/// Small random exemplar problem with random regularization weights.
pub fn esvm_instance(seed: u64) -> EsvmInstance {
    let mut rng = rng(seed);
    let d = rng.random_range(2..=6);
    let m = rng.random_range(5..=20);
    let positive = gaussian_rows(&mut rng, 1, d, 1.0).remove(0);
    let mut negatives = gaussian_rows(&mut rng, m, d, 1.0);
    for row in &mut negatives {
        row[0] += 0.5;
    }
    let params = EsvmParams {
        c_pos: rng.random_range(0.1..2.0),
        c_neg: rng.random_range(0.01..0.5),
        ..EsvmParams::default()
    };
    EsvmInstance {
        positive,
        negatives,
        params,
    }
}

// ---------------------------------------------------------------------------
// Softmax gradients.

pub fn random_model(rng: &mut ChaCha8Rng, k: usize, d: usize) -> SoftmaxModel {
    let normal = Normal::new(0.0, 0.5).unwrap();
    let mut model = SoftmaxModel::zeros(k, d);
    model
        .weights
        .iter_mut()
        .for_each(|w| *w = normal.sample(rng));
    model.bias.iter_mut().for_each(|b| *b = normal.sample(rng));
    model
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Central differences of `f` over every parameter of `model` (weights, then bias).
pub fn finite_difference(
    model: &SoftmaxModel,
    h: f64,
    f: impl Fn(&SoftmaxModel) -> f64,
) -> Vec<f64> {
    (0..model.num_params())
        .map(|p| {
            let nudge = |delta: f64| {
                let mut m = model.clone();
                if p < m.weights.len() {
                    m.weights[p] += delta;
                } else {
                    m.bias[p - m.weights.len()] += delta;
                }
                f(&m)
            };
            (nudge(h) - nudge(-h)) / (2.0 * h)
        })
        .collect()
}

/// Cross-entropy of one sample.
pub fn sample_loss(model: &SoftmaxModel, x: &[f32], y: u32) -> f64 {
    let l = model.logits(x).unwrap();
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - l[y as usize]
}

// ---------------------------------------------------------------------------
// Scores and statistics.

pub fn naive_l2(set: &EmbeddingSet, target: &TargetSample) -> Vec<f64> {
    (0..set.n())
        .map(|i| {
            -set.row(i)
                .iter()
                .zip(&target.feature)
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

pub fn naive_cosine(set: &EmbeddingSet, target: &TargetSample) -> Vec<f64> {
    let t: Vec<f64> = target.feature.iter().map(|&v| v as f64).collect();
    let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..set.n())
        .map(|i| {
            let r: Vec<f64> = set.row(i).iter().map(|&v| v as f64).collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / (rn * tn)
        })
        .collect()
}

/// Average ranks by counting: rank_i = #{v_j < v_i} + (#{v_j = v_i} + 1) / 2.
pub fn reference_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn reference_spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (reference_ranks(a), reference_ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

// ---------------------------------------------------------------------------
// An oracle whose margin is exactly additive in subset membership.

pub struct AdditiveOracle {
    /// Contribution of each training row to every target's margin.
    pub coefficients: Vec<f64>,
}

pub struct AdditiveModel {
    margin: f64,
}

impl Classifier for AdditiveModel {
    fn num_classes(&self) -> usize {
        2
    }

    // Class 0 logit carries the margin; targets are labelled 0.
    fn logits(&self, _feature: &[f32]) -> Result<Vec<f64>, OracleError> {
        Ok(vec![self.margin, 0.0])
    }
}

impl Oracle for AdditiveOracle {
    type Model = AdditiveModel;

    fn train(
        &self,
        view: &TrainingView<'_>,
        _cfg: &TrainConfig,
    ) -> Result<AdditiveModel, OracleError> {
        Ok(AdditiveModel {
            margin: view.rows().iter().map(|&i| self.coefficients[i]).sum(),
        })
    }
}
