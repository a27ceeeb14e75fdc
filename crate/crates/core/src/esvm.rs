//! Exemplar SVM: a linear SVM fit to a single positive sample against a set
//! of negatives, minimizing
//!
//! ```text
//! J(w, b) = ½‖w‖² + c_pos·max(0, 1 − (w·x⁺ + b)) + c_neg·Σ_j max(0, 1 + (w·x⁻_j + b))
//! ```
//!
//! The solver works on the box-constrained dual with two-coordinate (SMO)
//! updates. After every sweep the dual iterate is mapped back to a primal
//! candidate, and the primal iterate moves toward it by exact line search
//! followed by an exact bias refit, so the primal objective never increases.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EmbeddingSet;

#[derive(Debug, Error, PartialEq)]
pub enum EsvmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("at least one negative sample is required")]
    NoNegatives,
    #[error("index {0} out of range")]
    Index(usize),
    #[error("invalid parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsvmParams {
    pub c_pos: f64,
    pub c_neg: f64,
    /// Cap on solver sweeps; each sweep is up to `M + 1` pair updates.
    pub max_iters: usize,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    /// Unused by the deterministic solver, carried for reproducibility records.
    pub seed: u64,
}

impl Default for EsvmParams {
    fn default() -> Self {
        Self {
            c_pos: 0.5,
            c_neg: 0.01,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl EsvmParams {
    pub fn validate(&self) -> Result<(), EsvmError> {
        let ok = self.c_pos > 0.0
            && self.c_neg > 0.0
            && self.tol > 0.0
            && self.max_iters >= 1
            && self.c_pos.is_finite()
            && self.c_neg.is_finite();
        if ok {
            Ok(())
        } else {
            Err(EsvmError::Params(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub w: Vec<f64>,
    pub b: f64,
    pub converged: bool,
    pub final_objective: f64,
    /// Primal objective at the start and after every sweep.
    pub objective_trace: Vec<f64>,
}

impl Hyperplane {
    pub fn decision(&self, x: &[f32]) -> f64 {
        dot_wf(&self.w, x) + self.b
    }

    /// The same hyperplane with `(w, b)` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w: self.w.iter().map(|v| v * c).collect(),
            b: self.b * c,
            ..self.clone()
        }
    }
}

fn dot_wf(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Training problem in a flat layout: row 0 is the positive.
struct Problem {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    c: Vec<f64>,
}

impl Problem {
    fn new(positive: &[f32], negatives: &[&[f32]], params: &EsvmParams) -> Result<Self, EsvmError> {
        params.validate()?;
        if negatives.is_empty() {
            return Err(EsvmError::NoNegatives);
        }
        let d = positive.len();
        let mut x = Vec::with_capacity((negatives.len() + 1) * d);
        for row in std::iter::once(positive).chain(negatives.iter().copied()) {
            if row.len() != d {
                return Err(EsvmError::Dimension {
                    expected: d,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EsvmError::NonFinite);
            }
            x.extend(row.iter().map(|&v| v as f64));
        }
        let m = negatives.len() + 1;
        let mut y = vec![-1.0; m];
        y[0] = 1.0;
        let mut c = vec![params.c_neg; m];
        c[0] = params.c_pos;
        Ok(Self { d, x, y, c })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let hinge: f64 = (0..self.len())
            .map(|i| self.c[i] * (1.0 - self.y[i] * (dot(w, self.row(i)) + b)).max(0.0))
            .sum();
        0.5 * dot(w, w) + hinge
    }

    /// Exact minimizer over `b` of the piecewise-linear hinge sum for fixed `w`.
    fn best_bias(&self, w: &[f64]) -> f64 {
        // Breakpoints b_i = y_i − w·x_i; the slope starts at −Σ_{y=+1} c_i and
        // rises by c_i at each one.
        let mut breaks: Vec<(f64, f64)> = (0..self.len())
            .map(|i| (self.y[i] - dot(w, self.row(i)), self.c[i]))
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut slope: f64 = -(0..self.len())
            .filter(|&i| self.y[i] > 0.0)
            .map(|i| self.c[i])
            .sum::<f64>();
        for &(at, c) in &breaks {
            slope += c;
            if slope >= 0.0 {
                return at;
            }
        }
        breaks.last().map_or(0.0, |b| b.0)
    }

    fn primal_from_dual(&self, alpha: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.d];
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let s = a * self.y[i];
                for (wk, xk) in w.iter_mut().zip(self.row(i)) {
                    *wk += s * xk;
                }
            }
        }
        w
    }

    /// Minimizes `J((w,b) + s·(dw,db))` over `s ∈ [0, 1]`.
    fn line_search(&self, w: &[f64], b: f64, dw: &[f64], db: f64) -> f64 {
        let m = self.len();
        let base: Vec<f64> = (0..m)
            .map(|i| 1.0 - self.y[i] * (dot(w, self.row(i)) + b))
            .collect();
        let rate: Vec<f64> = (0..m)
            .map(|i| -self.y[i] * (dot(dw, self.row(i)) + db))
            .collect();
        let wdw = dot(w, dw);
        let dwdw = dot(dw, dw);
        let phi = |s: f64| -> f64 {
            let reg: f64 = 0.5 * (dot(w, w) + 2.0 * s * wdw + s * s * dwdw);
            reg + (0..m)
                .map(|i| self.c[i] * (base[i] + s * rate[i]).max(0.0))
                .sum::<f64>()
        };
        // Right derivative, non-decreasing in s.
        let dphi = |s: f64| -> f64 {
            wdw + s * dwdw
                + (0..m)
                    .filter(|&i| {
                        let v = base[i] + s * rate[i];
                        v > 0.0 || (v == 0.0 && rate[i] > 0.0)
                    })
                    .map(|i| self.c[i] * rate[i])
                    .sum::<f64>()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        if dphi(0.0) >= 0.0 {
            hi = 0.0;
        } else if dphi(1.0) <= 0.0 {
            lo = 1.0;
        } else {
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if dphi(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let mid = 0.5 * (lo + hi);
        [(0.0, phi(0.0)), (mid, phi(mid)), (1.0, phi(1.0))]
            .into_iter()
            .fold((0.0, f64::INFINITY), |best, cand| {
                if cand.1 < best.1 {
                    cand
                } else {
                    best
                }
            })
            .0
    }
}

/// Lazily computed rows of the signed Gram matrix `Q_ij = y_i y_j x_i·x_j`.
struct GramCache<'a> {
    problem: &'a Problem,
    rows: Vec<Option<Box<[f64]>>>,
}

impl<'a> GramCache<'a> {
    fn new(problem: &'a Problem) -> Self {
        Self {
            problem,
            rows: vec![None; problem.len()],
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        let p = self.problem;
        self.rows[i].get_or_insert_with(|| {
            let xi = p.row(i);
            (0..p.len())
                .map(|j| p.y[i] * p.y[j] * dot(xi, p.row(j)))
                .collect()
        })
    }
}

/// Trains an exemplar SVM with `positive` as the lone positive sample.
pub fn train_exemplar(
    positive: &[f32],
    negatives: &[&[f32]],
    params: &EsvmParams,
) -> Result<Hyperplane, EsvmError> {
    let problem = Problem::new(positive, negatives, params)?;
    let m = problem.len();
    let mut gram = GramCache::new(&problem);
    let diag: Vec<f64> = (0..m)
        .map(|i| dot(problem.row(i), problem.row(i)))
        .collect();

    // Dual: min ½αᵀQα − Σα  s.t. 0 ≤ α_i ≤ c_i, yᵀα = 0.  grad = Qα − 1.
    let mut alpha = vec![0.0; m];
    let mut grad = vec![-1.0; m];

    let mut w = vec![0.0; problem.d];
    let mut b = problem.best_bias(&w);
    let mut trace = vec![problem.objective(&w, b)];
    let mut converged = false;

    for _ in 0..params.max_iters {
        for _ in 0..m {
            match select_pair(&problem, &alpha, &grad, &diag, &mut gram, params.tol) {
                None => {
                    converged = true;
                    break;
                }
                Some((i, j)) => {
                    update_pair(&problem, &mut alpha, &mut grad, &diag, &mut gram, i, j)
                }
            }
        }

        let cand_w = problem.primal_from_dual(&alpha);
        let cand_b = problem.best_bias(&cand_w);
        let dw: Vec<f64> = cand_w.iter().zip(&w).map(|(c, o)| c - o).collect();
        let step = problem.line_search(&w, b, &dw, cand_b - b);
        if step > 0.0 {
            let moved: Vec<f64> = w.iter().zip(&dw).map(|(o, d)| o + step * d).collect();
            let moved_b = problem.best_bias(&moved);
            let moved_obj = problem.objective(&moved, moved_b);
            if moved_obj <= *trace.last().unwrap() {
                w = moved;
                b = moved_b;
            }
        }
        trace.push(problem.objective(&w, b));
        if converged {
            break;
        }
    }

    let final_objective = *trace.last().unwrap();
    if !final_objective.is_finite() || w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(EsvmError::NonFinite);
    }
    Ok(Hyperplane {
        w,
        b,
        converged,
        final_objective,
        objective_trace: trace,
    })
}

// Second-order working-set selection. Returns None when the maximal KKT
// violation is below `tol`.
fn select_pair(
    p: &Problem,
    alpha: &[f64],
    grad: &[f64],
    diag: &[f64],
    gram: &mut GramCache<'_>,
    tol: f64,
) -> Option<(usize, usize)> {
    let in_up = |t: usize| (p.y[t] > 0.0 && alpha[t] < p.c[t]) || (p.y[t] < 0.0 && alpha[t] > 0.0);
    let in_low = |t: usize| (p.y[t] < 0.0 && alpha[t] < p.c[t]) || (p.y[t] > 0.0 && alpha[t] > 0.0);

    let mut i = None;
    let mut g_max = f64::NEG_INFINITY;
    for (t, &g) in grad.iter().enumerate() {
        if in_up(t) {
            let v = -p.y[t] * g;
            if v > g_max {
                g_max = v;
                i = Some(t);
            }
        }
    }
    let i = i?;
    let q_i = gram.row(i);
    let mut j = None;
    let mut g_min = f64::INFINITY;
    let mut best = f64::INFINITY;
    for t in 0..p.len() {
        if !in_low(t) {
            continue;
        }
        let v = -p.y[t] * grad[t];
        g_min = g_min.min(v);
        let gap = g_max - v;
        if gap > 0.0 {
            let curvature = diag[i] + diag[t] - 2.0 * p.y[i] * p.y[t] * q_i[t];
            let curvature = if curvature > 0.0 { curvature } else { 1e-12 };
            let gain = -(gap * gap) / curvature;
            if gain < best {
                best = gain;
                j = Some(t);
            }
        }
    }
    if g_max - g_min < tol {
        return None;
    }
    j.map(|j| (i, j))
}

fn update_pair(
    p: &Problem,
    alpha: &mut [f64],
    grad: &mut [f64],
    diag: &[f64],
    gram: &mut GramCache<'_>,
    i: usize,
    j: usize,
) {
    let (ci, cj) = (p.c[i], p.c[j]);
    let (old_i, old_j) = (alpha[i], alpha[j]);
    let q_ij = gram.row(i)[j];
    let quad = {
        let a = diag[i] + diag[j] - 2.0 * p.y[i] * p.y[j] * q_ij;
        if a > 0.0 {
            a
        } else {
            1e-12
        }
    };

    if p.y[i] != p.y[j] {
        let delta = (-grad[i] - grad[j]) / quad;
        let diff = alpha[i] - alpha[j];
        alpha[i] += delta;
        alpha[j] += delta;
        if diff > 0.0 {
            if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = -diff;
        }
        if diff > ci - cj {
            if alpha[i] > ci {
                alpha[i] = ci;
                alpha[j] = ci - diff;
            }
        } else if alpha[j] > cj {
            alpha[j] = cj;
            alpha[i] = cj + diff;
        }
    } else {
        let delta = (grad[i] - grad[j]) / quad;
        let sum = alpha[i] + alpha[j];
        alpha[i] -= delta;
        alpha[j] += delta;
        if sum > ci {
            if alpha[i] > ci {
                alpha[i] = ci;
                alpha[j] = sum - ci;
            }
        } else if alpha[j] < 0.0 {
            alpha[j] = 0.0;
            alpha[i] = sum;
        }
        if sum > cj {
            if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = sum - cj;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = sum;
        }
    }

    let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
    if di != 0.0 {
        let q_i = gram.row(i);
        for (g, q) in grad.iter_mut().zip(q_i) {
            *g += q * di;
        }
    }
    if dj != 0.0 {
        let q_j = gram.row(j);
        for (g, q) in grad.iter_mut().zip(q_j) {
            *g += q * dj;
        }
    }
}

/// `w·x_i + b` for each requested index, in request order.
pub fn decision_values(
    h: &Hyperplane,
    set: &EmbeddingSet,
    indices: &[usize],
) -> Result<Vec<f64>, EsvmError> {
    if h.w.len() != set.d() {
        return Err(EsvmError::Dimension {
            expected: set.d(),
            got: h.w.len(),
        });
    }
    indices
        .iter()
        .map(|&i| {
            if i < set.n() {
                Ok(h.decision(set.row(i)))
            } else {
                Err(EsvmError::Index(i))
            }
        })
        .collect()
}

/// Evaluates `J(w, b)` for the given problem.
pub fn objective(
    h: &Hyperplane,
    positive: &[f32],
    negatives: &[&[f32]],
    params: &EsvmParams,
) -> Result<f64, EsvmError> {
    let problem = Problem::new(positive, negatives, params)?;
    if h.w.len() != problem.d {
        return Err(EsvmError::Dimension {
            expected: problem.d,
            got: h.w.len(),
        });
    }
    Ok(problem.objective(&h.w, h.b))
}
