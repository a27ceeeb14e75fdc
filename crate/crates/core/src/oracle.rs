//! Counterfactual retraining oracle.
//!
//! A multinomial logistic (softmax) regression trained on stored embeddings
//! stands in for "an average training run". Dataset modifications are applied
//! as lazy views over the immutable [`EmbeddingSet`]: an active-row list plus
//! label overrides. The [`Oracle`] and [`Classifier`] traits are the plug-in
//! boundary for heavier trainers.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{EmbeddingSet, TargetSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("effective training set is empty")]
    Empty,
    #[error("degenerate training set: only {populated} class(es) populated")]
    Degenerate { populated: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid modification: {0}")]
    Modification(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("label {0} out of range")]
    Label(u32),
    #[error("training diverged (non-finite parameters)")]
    Diverged,
}

type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Peak step size; decays to zero along a half cosine over all steps.
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// `None` means `min(512, n)`.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.1,
            weight_decay: 1e-4,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(OracleError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OracleError::Config("learning_rate must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(OracleError::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == Some(0) {
            return Err(OracleError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// A change to the training set, applied lazily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Modification {
    Remove(Vec<usize>),
    Mislabel { indices: Vec<usize>, new_label: u32 },
}

impl Modification {
    pub fn indices(&self) -> &[usize] {
        match self {
            Modification::Remove(ix) => ix,
            Modification::Mislabel { indices, .. } => indices,
        }
    }

    /// A view of `set` with this modification applied.
    pub fn apply<'a>(&self, set: &'a EmbeddingSet) -> Result<TrainingView<'a>> {
        let mut touched = vec![false; set.n()];
        for &i in self.indices() {
            if i >= set.n() {
                return Err(OracleError::Modification(format!("index {i} out of range")));
            }
            if std::mem::replace(&mut touched[i], true) {
                return Err(OracleError::Modification(format!("index {i} repeated")));
            }
        }
        match self {
            Modification::Remove(_) => Ok(TrainingView {
                set,
                rows: (0..set.n()).filter(|&i| !touched[i]).collect(),
                overrides: HashMap::new(),
            }),
            Modification::Mislabel { indices, new_label } => {
                if *new_label as usize >= set.num_classes() {
                    return Err(OracleError::Label(*new_label));
                }
                Ok(TrainingView {
                    set,
                    rows: (0..set.n()).collect(),
                    overrides: indices.iter().map(|&i| (i, *new_label)).collect(),
                })
            }
        }
    }
}

/// Active rows of an [`EmbeddingSet`] with optional label overrides.
#[derive(Debug, Clone)]
pub struct TrainingView<'a> {
    set: &'a EmbeddingSet,
    rows: Vec<usize>,
    overrides: HashMap<usize, u32>,
}

impl<'a> TrainingView<'a> {
    pub fn full(set: &'a EmbeddingSet) -> Self {
        Self {
            set,
            rows: (0..set.n()).collect(),
            overrides: HashMap::new(),
        }
    }

    /// Rows where `mask[i]` is true.
    pub fn masked(set: &'a EmbeddingSet, mask: &[bool]) -> Result<Self> {
        if mask.len() != set.n() {
            return Err(OracleError::Modification(format!(
                "mask length {} for {} samples",
                mask.len(),
                set.n()
            )));
        }
        Ok(Self {
            set,
            rows: (0..set.n()).filter(|&i| mask[i]).collect(),
            overrides: HashMap::new(),
        })
    }

    pub fn set(&self) -> &'a EmbeddingSet {
        self.set
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn label_of(&self, i: usize) -> u32 {
        self.overrides
            .get(&i)
            .copied()
            .unwrap_or_else(|| self.set.label(i))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.set.num_classes()];
        for &i in &self.rows {
            counts[self.label_of(i) as usize] += 1;
        }
        counts
    }

    fn check_trainable(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(OracleError::Empty);
        }
        let populated = self.class_counts().iter().filter(|&&c| c > 0).count();
        if populated < 2 {
            return Err(OracleError::Degenerate { populated });
        }
        Ok(())
    }
}

/// Anything that maps a feature vector to per-class logits.
pub trait Classifier {
    fn num_classes(&self) -> usize;

    fn logits(&self, feature: &[f32]) -> Result<Vec<f64>>;

    /// Arg-max label (lowest class id wins ties) and the logits.
    fn predict(&self, feature: &[f32]) -> Result<(u32, Vec<f64>)> {
        let logits = self.logits(feature)?;
        Ok((argmax(&logits) as u32, logits))
    }

    /// Correct-class logit minus the highest incorrect logit.
    fn margin(&self, target: &TargetSample) -> Result<f64> {
        let logits = self.logits(&target.feature)?;
        correct_class_margin(&logits, target.label)
    }
}

/// A retraining procedure producing a [`Classifier`].
pub trait Oracle: Sync {
    type Model: Classifier + Send + Sync;

    fn train(&self, view: &TrainingView<'_>, cfg: &TrainConfig) -> Result<Self::Model>;
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn correct_class_margin(logits: &[f64], label: u32) -> Result<f64> {
    let y = label as usize;
    if y >= logits.len() {
        return Err(OracleError::Label(label));
    }
    let best_wrong = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[y] - best_wrong)
}

/// Linear softmax classifier: `logits = W·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub num_classes: usize,
    pub d: usize,
    /// Row-major `num_classes × d`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub train_seed: u64,
}

impl SoftmaxModel {
    pub fn zeros(num_classes: usize, d: usize) -> Self {
        Self {
            num_classes,
            d,
            weights: vec![0.0; num_classes * d],
            bias: vec![0.0; num_classes],
            train_seed: 0,
        }
    }

    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.d..(c + 1) * self.d];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, &b)| a * b as f64).sum::<f64>();
        }
    }

    /// Number of trainable parameters (`weights` then `bias`).
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Gradient of the cross-entropy loss at one sample with respect to all
    /// parameters, laid out as `weights` followed by `bias`.
    pub fn sample_gradient(&self, feature: &[f32], label: u32) -> Result<Vec<f64>> {
        self.check_dim(feature)?;
        if label as usize >= self.num_classes {
            return Err(OracleError::Label(label));
        }
        let mut p = vec![0.0; self.num_classes];
        self.logits_into(feature, &mut p);
        softmax_in_place(&mut p);
        p[label as usize] -= 1.0;
        let mut grad = Vec::with_capacity(self.num_params());
        for &pc in &p {
            grad.extend(feature.iter().map(|&x| pc * x as f64));
        }
        grad.extend_from_slice(&p);
        Ok(grad)
    }

    fn check_dim(&self, feature: &[f32]) -> Result<()> {
        if feature.len() == self.d {
            Ok(())
        } else {
            Err(OracleError::Dimension {
                expected: self.d,
                got: feature.len(),
            })
        }
    }
}

impl Classifier for SoftmaxModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, feature: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(feature)?;
        let mut out = vec![0.0; self.num_classes];
        self.logits_into(feature, &mut out);
        Ok(out)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Mean cross-entropy over the view plus `½·weight_decay·‖W‖²`, and its
/// gradient with respect to `weights` and `bias`.
pub fn training_objective(
    model: &SoftmaxModel,
    view: &TrainingView<'_>,
    weight_decay: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = vec![0.0; model.num_classes];
    let mut p = vec![0.0; model.num_classes];
    let mut loss = 0.0;
    for &i in view.rows() {
        let x = view.set().row(i);
        let y = view.label_of(i) as usize;
        model.logits_into(x, &mut p);
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - p[y];
        softmax_in_place(&mut p);
        p[y] -= 1.0;
        accumulate(&mut gw, &mut gb, &p, x, model.d);
    }
    let inv = 1.0 / view.len().max(1) as f64;
    loss *= inv;
    loss += 0.5 * weight_decay * model.weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g * inv + weight_decay * w;
    }
    for g in gb.iter_mut() {
        *g *= inv;
    }
    (loss, gw, gb)
}

#[inline]
fn accumulate(gw: &mut [f64], gb: &mut [f64], residual: &[f64], x: &[f32], d: usize) {
    for (c, &r) in residual.iter().enumerate() {
        gb[c] += r;
        let row = &mut gw[c * d..(c + 1) * d];
        for (g, &xv) in row.iter_mut().zip(x) {
            *g += r * xv as f64;
        }
    }
}

/// Mini-batch gradient descent on softmax regression.
#[derive(Debug, Clone, Copy, Default)]
pub struct SoftmaxOracle;

impl Oracle for SoftmaxOracle {
    type Model = SoftmaxModel;

    fn train(&self, view: &TrainingView<'_>, cfg: &TrainConfig) -> Result<SoftmaxModel> {
        cfg.validate()?;
        view.check_trainable()?;
        let set = view.set();
        let (k, d) = (set.num_classes(), set.d());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = Normal::new(0.0, 0.01).expect("valid normal");
        let mut model = SoftmaxModel {
            num_classes: k,
            d,
            weights: (0..k * d).map(|_| init.sample(&mut rng)).collect(),
            bias: vec![0.0; k],
            train_seed: cfg.seed,
        };

        let n = view.len();
        let batch = cfg.batch_size.unwrap_or(512).min(n);
        let steps_per_epoch = n.div_ceil(batch);
        let total_steps = (cfg.epochs * steps_per_epoch) as f64;
        let mut order: Vec<usize> = view.rows().to_vec();
        let labels: Vec<u32> = (0..set.n()).map(|i| view.label_of(i)).collect();
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        let mut p = vec![0.0; k];
        let mut step = 0usize;

        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                gw.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);
                for &i in chunk {
                    let x = set.row(i);
                    model.logits_into(x, &mut p);
                    softmax_in_place(&mut p);
                    p[labels[i] as usize] -= 1.0;
                    accumulate(&mut gw, &mut gb, &p, x, d);
                }
                let lr = cfg.learning_rate
                    * 0.5
                    * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
                let inv = 1.0 / chunk.len() as f64;
                for (w, g) in model.weights.iter_mut().zip(&gw) {
                    *w -= lr * (g * inv + cfg.weight_decay * *w);
                }
                for (b, g) in model.bias.iter_mut().zip(&gb) {
                    *b -= lr * g * inv;
                }
                step += 1;
            }
        }
        if model
            .weights
            .iter()
            .chain(&model.bias)
            .any(|v| !v.is_finite())
        {
            return Err(OracleError::Diverged);
        }
        Ok(model)
    }
}

/// Trains on `set` with `modification` applied (or unmodified).
pub fn train<O: Oracle>(
    oracle: &O,
    set: &EmbeddingSet,
    modification: Option<&Modification>,
    cfg: &TrainConfig,
) -> Result<O::Model> {
    match modification {
        Some(m) => oracle.train(&m.apply(set)?, cfg),
        None => oracle.train(&TrainingView::full(set), cfg),
    }
}

/// `n_test` models trained on the unmodified set with seeds
/// `cfg.seed + 0 .. cfg.seed + n_test − 1`. Independent of any target, so one
/// ensemble can serve a whole batch.
pub fn ensemble<O: Oracle>(
    oracle: &O,
    set: &EmbeddingSet,
    cfg: &TrainConfig,
    n_test: usize,
) -> Result<Vec<O::Model>> {
    if n_test == 0 {
        return Err(OracleError::Config("n_test must be >= 1".into()));
    }
    let view = TrainingView::full(set);
    (0..n_test as u64)
        .into_par_iter()
        .map(|r| oracle.train(&view, &cfg.with_seed(cfg.seed.wrapping_add(r))))
        .collect()
}

/// Logits at `target` from each model of [`ensemble`].
pub fn ensemble_logits<O: Oracle>(
    oracle: &O,
    set: &EmbeddingSet,
    target: &TargetSample,
    cfg: &TrainConfig,
    n_test: usize,
) -> Result<Vec<Vec<f64>>> {
    check_target(set, target)?;
    ensemble(oracle, set, cfg, n_test)?
        .iter()
        .map(|m| m.logits(&target.feature))
        .collect()
}

/// Highest incorrect class of the averaged logits, lowest id on ties.
pub fn highest_incorrect_class(avg_logits: &[f64], label: u32) -> Option<u32> {
    let mut best: Option<usize> = None;
    for (c, &v) in avg_logits.iter().enumerate() {
        if c as u32 == label {
            continue;
        }
        if best.is_none_or(|b| v > avg_logits[b]) {
            best = Some(c);
        }
    }
    best.map(|c| c as u32)
}

/// Relabeling class from an already trained unmodified ensemble.
pub fn mislabel_class_from<M: Classifier>(models: &[M], target: &TargetSample) -> Result<u32> {
    let first = models
        .first()
        .ok_or_else(|| OracleError::Config("empty ensemble".into()))?;
    let mut avg = vec![0.0; first.num_classes()];
    for model in models {
        for (a, l) in avg.iter_mut().zip(model.logits(&target.feature)?) {
            *a += l / models.len() as f64;
        }
    }
    highest_incorrect_class(&avg, target.label).ok_or(OracleError::Label(target.label))
}

/// The relabeling class for mislabel support: the highest incorrect logit of
/// the averaged unmodified ensemble at `target`.
pub fn mislabel_target_class<O: Oracle>(
    oracle: &O,
    set: &EmbeddingSet,
    target: &TargetSample,
    cfg: &TrainConfig,
    n_test: usize,
) -> Result<u32> {
    check_target(set, target)?;
    mislabel_class_from(&ensemble(oracle, set, cfg, n_test)?, target)
}

/// Fraction of `n_test` runs (seeds `cfg.seed + r`) on the modified set that
/// classify `target` correctly.
pub fn counterfactual_test<O: Oracle>(
    oracle: &O,
    set: &EmbeddingSet,
    modification: Option<&Modification>,
    target: &TargetSample,
    cfg: &TrainConfig,
    n_test: usize,
) -> Result<f64> {
    if n_test == 0 {
        return Err(OracleError::Config("n_test must be >= 1".into()));
    }
    check_target(set, target)?;
    let view = match modification {
        Some(m) => m.apply(set)?,
        None => TrainingView::full(set),
    };
    view.check_trainable()?;
    let correct: Vec<bool> = (0..n_test as u64)
        .into_par_iter()
        .map(|r| {
            let model = oracle.train(&view, &cfg.with_seed(cfg.seed.wrapping_add(r)))?;
            Ok(model.predict(&target.feature)?.0 == target.label)
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / n_test as f64)
}

fn check_target(set: &EmbeddingSet, target: &TargetSample) -> Result<()> {
    if target.feature.len() != set.d() {
        return Err(OracleError::Dimension {
            expected: set.d(),
            got: target.feature.len(),
        });
    }
    if target.label as usize >= set.num_classes() {
        return Err(OracleError::Label(target.label));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{generate_synthetic, SyntheticConfig};

    fn easy_set() -> EmbeddingSet {
        generate_synthetic(&SyntheticConfig {
            num_classes: 2,
            samples_per_class: 50,
            d: 4,
            cluster_spread: 0.3,
            inter_class_distance: 6.0,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn predict_hand_cases() {
        let mut m = SoftmaxModel::zeros(2, 2);
        m.bias = vec![1.0, 0.0];
        assert_eq!(m.predict(&[5.0, -3.0]).unwrap().0, 0);
        let m = SoftmaxModel {
            weights: vec![1.0, 0.0, 0.0, 1.0],
            ..SoftmaxModel::zeros(2, 2)
        };
        let (label, logits) = m.predict(&[2.0, 3.0]).unwrap();
        assert_eq!(logits, vec![2.0, 3.0]);
        assert_eq!(label, 1);
        assert!(m.predict(&[1.0]).is_err());
        // ties go to the lowest class
        assert_eq!(SoftmaxModel::zeros(3, 1).predict(&[1.0]).unwrap().0, 0);
    }

    #[test]
    fn margin_hand_cases() {
        assert_eq!(correct_class_margin(&[2.0, 0.5, -1.0], 0).unwrap(), 1.5);
        assert_eq!(correct_class_margin(&[0.5, 2.0], 0).unwrap(), -1.5);
        assert!(correct_class_margin(&[0.5, 2.0], 2).is_err());
    }

    #[test]
    fn highest_incorrect() {
        assert_eq!(highest_incorrect_class(&[5.0, 1.0, 3.0], 0), Some(2));
        assert_eq!(highest_incorrect_class(&[5.0, 3.0, 3.0], 0), Some(1));
        assert_eq!(highest_incorrect_class(&[0.0, 9.0], 1), Some(0));
    }

    #[test]
    fn separable_training_is_perfect_and_deterministic() {
        let set = easy_set();
        let cfg = TrainConfig::default();
        let a = train(&SoftmaxOracle, &set, None, &cfg).unwrap();
        let b = train(&SoftmaxOracle, &set, None, &cfg).unwrap();
        assert_eq!(a, b);
        for i in 0..set.n() {
            assert_eq!(a.predict(set.row(i)).unwrap().0, set.label(i));
        }
    }

    #[test]
    fn removing_a_whole_class_is_degenerate() {
        let set = easy_set();
        let class1 = set.class_indices(1).unwrap();
        let m = Modification::Remove(class1.clone());
        assert_eq!(
            train(&SoftmaxOracle, &set, Some(&m), &TrainConfig::default()),
            Err(OracleError::Degenerate { populated: 1 })
        );
        let target = set.target(class1[0]);
        let class0 = set.class_indices(0).unwrap();
        assert!(matches!(
            counterfactual_test(
                &SoftmaxOracle,
                &set,
                Some(&Modification::Remove(class0)),
                &target,
                &TrainConfig::default(),
                2
            ),
            Err(OracleError::Degenerate { .. })
        ));
    }

    #[test]
    fn modification_views() {
        let set = easy_set();
        let view = Modification::Remove(vec![0, 5, 7]).apply(&set).unwrap();
        assert_eq!(view.len(), set.n() - 3);
        let view = Modification::Mislabel {
            indices: vec![1, 2],
            new_label: 1,
        }
        .apply(&set)
        .unwrap();
        assert_eq!(view.len(), set.n());
        let changed = (0..set.n())
            .filter(|&i| view.label_of(i) != set.label(i))
            .count();
        assert_eq!(changed, 2);
        assert!(Modification::Remove(vec![1, 1]).apply(&set).is_err());
        assert!(Modification::Remove(vec![set.n()]).apply(&set).is_err());
    }

    #[test]
    fn counterfactual_unmodified_easy_target() {
        let set = easy_set();
        let target = set.target(0);
        let c = counterfactual_test(
            &SoftmaxOracle,
            &set,
            None,
            &target,
            &TrainConfig::default(),
            3,
        )
        .unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn two_class_mislabel_target() {
        let set = easy_set();
        for i in [0, 60] {
            let t = set.target(i);
            let c = mislabel_target_class(&SoftmaxOracle, &set, &t, &TrainConfig::default(), 2)
                .unwrap();
            assert_eq!(c, 1 - t.label);
        }
    }

    #[test]
    fn sample_gradient_of_identical_features_opposite_labels() {
        let m = SoftmaxModel {
            weights: vec![0.3, -0.2, 0.1, 0.4],
            bias: vec![0.05, -0.1],
            ..SoftmaxModel::zeros(2, 2)
        };
        let a = m.sample_gradient(&[1.0, 2.0], 0).unwrap();
        let b = m.sample_gradient(&[1.0, 2.0], 1).unwrap();
        // For two classes the residuals are (p0−1, p1) and (p0, p1−1): both
        // proportional to (−1, 1), with opposite signs.
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(dot < 0.0);
    }
}
