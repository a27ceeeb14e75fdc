//! Data support estimation and brittleness reporting.
//!
//! [`compute_support`] is the budgeted bisection over prefix sizes `M` of an
//! attribution ranking: the first probe removes (or mislabels) the whole
//! top-`k` prefix; if the target survives, the support is reported as not
//! found. Otherwise the search halves `[L, H]` for `budget` rounds, keeping
//! the smallest misclassifying `M` seen.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::RankedIndices;
use crate::oracle::{self, Modification, Oracle, OracleError, TrainConfig};
use crate::store::{EmbeddingSet, TargetSample};

pub const DEFAULT_BUDGET: usize = 7;
pub const DEFAULT_N_TEST: usize = 5;
pub const DEFAULT_K: usize = 1280;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupportError {
    #[error("probe at M={m} failed: {source}")]
    Probe { m: usize, source: OracleError },
    #[error("invalid query: {0}")]
    Query(String),
    #[error("no support results to report")]
    Empty,
    #[error("results disagree on k ({0} vs {1})")]
    MixedK(usize, usize),
    #[error("target ids misaligned at position {pos}: {a} vs {b}")]
    Misaligned { pos: usize, a: u64, b: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportMode {
    Remove,
    Mislabel,
}

impl fmt::Display for SupportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupportMode::Remove => "remove",
            SupportMode::Mislabel => "mislabel",
        })
    }
}

impl FromStr for SupportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "remove" => Ok(SupportMode::Remove),
            "mislabel" => Ok(SupportMode::Mislabel),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportQuery {
    pub target: TargetSample,
    pub ranked: RankedIndices,
    pub mode: SupportMode,
    pub budget: usize,
    pub n_test: usize,
}

impl SupportQuery {
    /// Maximum subset size: the length of the ranking.
    pub fn k(&self) -> usize {
        self.ranked.indices.len()
    }

    fn validate(&self) -> Result<(), SupportError> {
        if self.budget == 0 {
            return Err(SupportError::Query("budget must be >= 1".into()));
        }
        if self.n_test == 0 {
            return Err(SupportError::Query("n_test must be >= 1".into()));
        }
        if self.k() == 0 {
            return Err(SupportError::Query("ranking is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportResult {
    pub target_id: u64,
    pub mode: SupportMode,
    pub k: usize,
    /// `None` when the whole top-`k` prefix does not flip the target.
    pub support: Option<usize>,
    /// Every `(M, C_avg)` actually sent to the oracle, in order.
    pub probes: Vec<(usize, f64)>,
}

impl SupportResult {
    /// Support as exported: `-1` for not found.
    pub fn signed_support(&self) -> i64 {
        self.support.map_or(-1, |s| s as i64)
    }
}

/// Average correctness of the target after modifying the top-`M` prefix.
pub trait CounterfactualProbe {
    fn c_avg(&self, m: usize) -> Result<f64, OracleError>;
}

impl<P: CounterfactualProbe + ?Sized> CounterfactualProbe for &P {
    fn c_avg(&self, m: usize) -> Result<f64, OracleError> {
        (**self).c_avg(m)
    }
}

/// Closed-form monotone oracle: misclassifies iff `M >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdProbe {
    pub threshold: Option<usize>,
}

impl CounterfactualProbe for ThresholdProbe {
    fn c_avg(&self, m: usize) -> Result<f64, OracleError> {
        Ok(match self.threshold {
            Some(t) if m >= t => 0.0,
            _ => 1.0,
        })
    }
}

/// Probe backed by actual retraining through an [`Oracle`].
///
/// Trial seeds derive from `(cfg.seed, target id, M)` plus the trial index,
/// so serial and concurrent runs agree.
pub struct RetrainingProbe<'a, O: Oracle> {
    pub oracle: &'a O,
    pub set: &'a EmbeddingSet,
    pub target: &'a TargetSample,
    pub ranked: &'a [usize],
    pub mode: SupportMode,
    /// Required for [`SupportMode::Mislabel`].
    pub new_label: Option<u32>,
    pub cfg: TrainConfig,
    pub n_test: usize,
}

impl<O: Oracle> RetrainingProbe<'_, O> {
    pub fn modification(&self, m: usize) -> Result<Modification, OracleError> {
        let indices = self.ranked[..m.min(self.ranked.len())].to_vec();
        match self.mode {
            SupportMode::Remove => Ok(Modification::Remove(indices)),
            SupportMode::Mislabel => {
                let new_label = self.new_label.ok_or_else(|| {
                    OracleError::Modification("mislabel probe without a new label".into())
                })?;
                Ok(Modification::Mislabel { indices, new_label })
            }
        }
    }
}

impl<O: Oracle> CounterfactualProbe for RetrainingProbe<'_, O> {
    fn c_avg(&self, m: usize) -> Result<f64, OracleError> {
        let modification = self.modification(m)?;
        let seed = crate::seed::derive(self.cfg.seed, &[self.target.id, m as u64]);
        oracle::counterfactual_test(
            self.oracle,
            self.set,
            Some(&modification),
            self.target,
            &self.cfg.with_seed(seed),
            self.n_test,
        )
    }
}

// Memoizes probe outcomes per M and logs the calls that reached the oracle.
struct ProbeLog<P> {
    probe: P,
    seen: RefCell<HashMap<usize, f64>>,
    calls: RefCell<Vec<(usize, f64)>>,
}

impl<P: CounterfactualProbe> ProbeLog<P> {
    fn new(probe: P) -> Self {
        Self {
            probe,
            seen: RefCell::default(),
            calls: RefCell::default(),
        }
    }

    fn c_avg(&self, m: usize) -> Result<f64, SupportError> {
        if let Some(&c) = self.seen.borrow().get(&m) {
            return Ok(c);
        }
        let c = self
            .probe
            .c_avg(m)
            .map_err(|source| SupportError::Probe { m, source })?;
        self.seen.borrow_mut().insert(m, c);
        self.calls.borrow_mut().push((m, c));
        Ok(c)
    }
}

fn correct(c_avg: f64) -> bool {
    c_avg > 0.5
}

/// Budgeted bisection for the smallest misclassifying prefix of the ranking.
pub fn compute_support<P: CounterfactualProbe>(
    query: &SupportQuery,
    probe: P,
) -> Result<SupportResult, SupportError> {
    query.validate()?;
    let log = ProbeLog::new(probe);
    let (mut low, mut high) = (0, query.k());
    let mut support = None;
    if !correct(log.c_avg(high)?) {
        let mut best = high;
        for _ in 0..query.budget {
            let mid = (low + high) / 2;
            if correct(log.c_avg(mid)?) {
                low = mid;
            } else {
                high = mid;
                best = best.min(mid);
            }
        }
        support = Some(best);
    }
    Ok(SupportResult {
        target_id: query.target.id,
        mode: query.mode,
        k: query.k(),
        support,
        probes: log.calls.into_inner(),
    })
}

/// Reference scan over every prefix size `M = 1..=k`.
pub fn brute_force_support<P: CounterfactualProbe>(
    query: &SupportQuery,
    probe: P,
) -> Result<SupportResult, SupportError> {
    query.validate()?;
    let log = ProbeLog::new(probe);
    let mut support = None;
    for m in 1..=query.k() {
        if !correct(log.c_avg(m)?) {
            support = Some(m);
            break;
        }
    }
    Ok(SupportResult {
        target_id: query.target.id,
        mode: query.mode,
        k: query.k(),
        support,
        probes: log.calls.into_inner(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrittlenessReport {
    pub results: Vec<SupportResult>,
    /// Right-continuous step function as `(x, fraction flipped at ≤ x)`,
    /// starting at `x = 0` and ending at `x = k`.
    pub cdf: Vec<(usize, f64)>,
    pub auc: f64,
    pub k: usize,
}

/// CDF of found supports over `[0, k]` and its normalized area.
pub fn cdf_and_auc(results: &[SupportResult], k: usize) -> Result<BrittlenessReport, SupportError> {
    if results.is_empty() {
        return Err(SupportError::Empty);
    }
    if k == 0 {
        return Err(SupportError::Query("k must be >= 1".into()));
    }
    if let Some(r) = results.iter().find(|r| r.k != k) {
        return Err(SupportError::MixedK(k, r.k));
    }
    let total = results.len() as f64;
    let mut found: Vec<usize> = results.iter().filter_map(|r| r.support).collect();
    found.sort_unstable();

    let frac_at = |x: usize| found.partition_point(|&s| s <= x) as f64 / total;
    let mut xs: Vec<usize> = std::iter::once(0)
        .chain(found.iter().copied())
        .chain(std::iter::once(k))
        .filter(|&x| x <= k)
        .collect();
    xs.dedup();
    let cdf = xs.into_iter().map(|x| (x, frac_at(x))).collect();

    let area: f64 = found
        .iter()
        .filter(|&&s| s <= k)
        .fold(0.0, |acc, &s| acc + (k - s) as f64)
        / total;
    Ok(BrittlenessReport {
        results: results.to_vec(),
        cdf,
        auc: area / k as f64,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WinRate {
    pub smaller: usize,
    pub equal: usize,
    pub larger: usize,
}

impl WinRate {
    pub fn total(&self) -> usize {
        self.smaller + self.equal + self.larger
    }
}

/// Per-target comparison of `a` against `b`; "not found" ranks above every
/// found support and equal to another "not found".
pub fn win_rate(a: &[SupportResult], b: &[SupportResult]) -> Result<WinRate, SupportError> {
    if a.len() != b.len() {
        return Err(SupportError::Query(format!(
            "result lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut out = WinRate::default();
    for (pos, (ra, rb)) in a.iter().zip(b).enumerate() {
        if ra.target_id != rb.target_id {
            return Err(SupportError::Misaligned {
                pos,
                a: ra.target_id,
                b: rb.target_id,
            });
        }
        let key = |s: Option<usize>| s.unwrap_or(usize::MAX);
        match key(ra.support).cmp(&key(rb.support)) {
            std::cmp::Ordering::Less => out.smaller += 1,
            std::cmp::Ordering::Equal => out.equal += 1,
            std::cmp::Ordering::Greater => out.larger += 1,
        }
    }
    Ok(out)
}
