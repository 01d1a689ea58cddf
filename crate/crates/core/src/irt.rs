//! Rasch model estimation by marginal maximum likelihood.
//!
//! Abilities are integrated out under a standard normal prior on a
//! Gauss-Hermite grid. EM alternates a posterior-weight E-step over the grid
//! with per-item Newton solves of the expected score equations. Standard
//! errors come from the observed information at the optimum.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ctt::{DifficultyKind, DifficultyVector};
use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Respondents per E-step block. Partial sums are formed per block and
/// added in block order, so the result does not depend on thread count.
const BLOCK: usize = 64;

/// 1 / (1 + exp(−a(θ − b))).
pub fn rasch_icc(theta: f64, b: f64, a: f64) -> f64 {
    logistic(a * (theta - b))
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(logistic(z)), stable for large |z|.
fn ln_logistic(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Quadrature rule for E[f(θ)] with θ ~ N(0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Gauss-Hermite rule for the standard normal (probabilists' Hermite
    /// polynomials), computed by Golub-Welsch.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("quadrature needs >= 2 points, got {n}")));
        }
        // Jacobi matrix of He_k: zero diagonal, off-diagonal sqrt(k)
        let mut j = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let v = (k as f64).sqrt();
            j[(k - 1, k)] = v;
            j[(k, k - 1)] = v;
        }
        let eig = SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrize away eigen-solver noise
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let m = n - 1 - i;
            nodes[i] = 0.5 * (pairs[i].0 - pairs[m].0);
            weights[i] = 0.5 * (pairs[i].1 + pairs[m].1);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum DiscriminationMode {
    /// Pure Rasch: a common slope held fixed (1.0 by default).
    Fixed(f64),
    /// One slope shared by all items, estimated alongside the b's.
    EstimatedShared,
}

impl Default for DiscriminationMode {
    fn default() -> Self {
        DiscriminationMode::Fixed(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaschConfig {
    pub quadrature_points: usize,
    pub discrimination: DiscriminationMode,
    /// EM stops when the largest parameter change falls below this.
    pub em_tolerance: f64,
    pub newton_tolerance: f64,
    pub max_em_iterations: usize,
    pub execution: Execution,
    /// Starting difficulties (retained items, in matrix order); defaults to
    /// the negated logit of proportion correct.
    #[serde(skip)]
    pub start: Option<Vec<f64>>,
}

impl Default for RaschConfig {
    fn default() -> Self {
        Self {
            quadrature_points: 61,
            discrimination: DiscriminationMode::default(),
            em_tolerance: 1e-4,
            newton_tolerance: 1e-10,
            max_em_iterations: 500,
            execution: Execution::default(),
            start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    AllCorrect,
    AllIncorrect,
    NoResponses,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub item_id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaschFit {
    pub item_ids: Vec<String>,
    pub b: Vec<f64>,
    pub se_b: Vec<Option<f64>>,
    pub discrimination: f64,
    pub se_discrimination: Option<f64>,
    pub discrimination_mode: DiscriminationMode,
    pub quadrature: Quadrature,
    pub log_likelihood: f64,
    /// Marginal log-likelihood at the start of each EM iteration, followed
    /// by the value at the returned parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest parameter change in the final iteration.
    pub max_change: f64,
    pub n_respondents: usize,
    pub dropped_items: Vec<DroppedItem>,
}

impl RaschFit {
    /// A fit from known parameters, e.g. to score abilities under a fixed
    /// item calibration.
    pub fn from_parameters(item_ids: Vec<String>, b: Vec<f64>, discrimination: f64, quadrature: Quadrature) -> Self {
        let k = item_ids.len();
        RaschFit {
            item_ids,
            b,
            se_b: vec![None; k],
            discrimination,
            se_discrimination: None,
            discrimination_mode: DiscriminationMode::Fixed(discrimination),
            quadrature,
            log_likelihood: f64::NAN,
            log_likelihood_trace: Vec::new(),
            iterations: 0,
            converged: true,
            max_change: 0.0,
            n_respondents: 0,
            dropped_items: Vec::new(),
        }
    }

    pub fn difficulty_vector(&self, population: crate::data::PopulationTag) -> DifficultyVector {
        DifficultyVector { population, kind: DifficultyKind::RaschB, item_ids: self.item_ids.clone(), values: self.b.clone() }
    }
}

/// Responses of one respondent as (item index, score) pairs.
type Observations = Vec<(usize, bool)>;

fn observations(m: &ResponseMatrix, cols: &[usize]) -> Vec<Observations> {
    (0..m.n_respondents())
        .map(|r| cols.iter().enumerate().filter_map(|(k, &c)| m.get(r, c).map(|v| (k, v == 1))).collect::<Observations>())
        .filter(|o| !o.is_empty())
        .collect()
}

/// Per-item log P and log(1 − P) on every node.
struct LogTables {
    q: usize,
    ln_p: Vec<f64>,
    ln_q: Vec<f64>,
}

impl LogTables {
    fn new(b: &[f64], a: f64, quad: &Quadrature) -> Self {
        let q = quad.len();
        let mut ln_p = Vec::with_capacity(b.len() * q);
        let mut ln_q = Vec::with_capacity(b.len() * q);
        for &bi in b {
            for &t in &quad.nodes {
                let z = a * (t - bi);
                ln_p.push(ln_logistic(z));
                ln_q.push(ln_logistic(-z));
            }
        }
        Self { q, ln_p, ln_q }
    }

    /// Posterior weights over the grid and the respondent's marginal
    /// log-likelihood.
    fn posterior(&self, obs: &[(usize, bool)], ln_w: &[f64], post: &mut [f64]) -> f64 {
        post.copy_from_slice(ln_w);
        for &(i, x) in obs {
            let row = if x { &self.ln_p[i * self.q..(i + 1) * self.q] } else { &self.ln_q[i * self.q..(i + 1) * self.q] };
            for (p, l) in post.iter_mut().zip(row) {
                *p += l;
            }
        }
        let max = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for p in post.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        for p in post.iter_mut() {
            *p /= sum;
        }
        max + sum.ln()
    }
}

/// Expected counts per item and node: `n[i][q]` respondents observed on i,
/// `r[i][q]` of them correct, plus the total marginal log-likelihood.
struct Expected {
    n: Vec<f64>,
    r: Vec<f64>,
    ll: f64,
}

fn e_step(obs: &[Observations], k: usize, tables: &LogTables, ln_w: &[f64], exec: Execution) -> Expected {
    let q = tables.q;
    let blocks = obs.len().div_ceil(BLOCK);
    let partials = exec.map(blocks, |bk| {
        let mut acc = Expected { n: vec![0.0; k * q], r: vec![0.0; k * q], ll: 0.0 };
        let mut post = vec![0.0; q];
        for o in &obs[bk * BLOCK..((bk + 1) * BLOCK).min(obs.len())] {
            acc.ll += tables.posterior(o, ln_w, &mut post);
            for &(i, x) in o {
                let nrow = &mut acc.n[i * q..(i + 1) * q];
                for (a, p) in nrow.iter_mut().zip(&post) {
                    *a += p;
                }
                if x {
                    let rrow = &mut acc.r[i * q..(i + 1) * q];
                    for (a, p) in rrow.iter_mut().zip(&post) {
                        *a += p;
                    }
                }
            }
        }
        acc
    });
    let mut total = Expected { n: vec![0.0; k * q], r: vec![0.0; k * q], ll: 0.0 };
    for part in partials {
        total.ll += part.ll;
        for (a, b) in total.n.iter_mut().zip(&part.n) {
            *a += b;
        }
        for (a, b) in total.r.iter_mut().zip(&part.r) {
            *a += b;
        }
    }
    total
}

/// Solve Σ_q (r_q − n_q P(θ_q; b)) = 0 for b by damped Newton.
fn solve_item(n: &[f64], r: &[f64], nodes: &[f64], a: f64, start: f64, tol: f64) -> f64 {
    let mut b = start;
    for _ in 0..200 {
        let (mut g, mut h) = (0.0, 0.0);
        for ((&nq, &rq), &t) in n.iter().zip(r).zip(nodes) {
            let p = rasch_icc(t, b, a);
            g += rq - nq * p;
            h += nq * a * p * (1.0 - p);
        }
        if h <= 0.0 {
            break;
        }
        // g increases in b, so the root is at b − g/h
        let step = (g / h).clamp(-1.0, 1.0);
        b -= step;
        if step.abs() < tol {
            break;
        }
    }
    b
}

/// Maximise the expected complete-data log-likelihood over the shared slope.
fn solve_slope(e: &Expected, b: &[f64], nodes: &[f64], start: f64, tol: f64) -> f64 {
    let q = nodes.len();
    let mut a = start;
    for _ in 0..200 {
        let (mut g, mut h) = (0.0, 0.0);
        for (i, &bi) in b.iter().enumerate() {
            for (j, &t) in nodes.iter().enumerate() {
                let d = t - bi;
                let p = rasch_icc(t, bi, a);
                g += (e.r[i * q + j] - e.n[i * q + j] * p) * d;
                h += e.n[i * q + j] * p * (1.0 - p) * d * d;
            }
        }
        if h <= 0.0 {
            break;
        }
        let mut step = (g / h).clamp(-0.5, 0.5);
        while a + step <= 0.05 {
            step *= 0.5;
        }
        a += step;
        if step.abs() < tol {
            break;
        }
    }
    a
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fit the Rasch model by MML-EM.
///
/// All-correct and all-incorrect items are removed first and reported in
/// `dropped_items`. Non-convergence is not an error: the fit comes back with
/// `converged = false`.
pub fn fit_rasch_mml(m: &ResponseMatrix, cfg: &RaschConfig) -> Result<RaschFit> {
    if !(cfg.em_tolerance > 0.0 && cfg.newton_tolerance > 0.0) {
        return Err(Error::Config("tolerances must be positive".into()));
    }
    if let DiscriminationMode::Fixed(a) = cfg.discrimination {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Config(format!("discrimination must be positive, got {a}")));
        }
    }
    let quad = Quadrature::gauss_hermite(cfg.quadrature_points)?;

    let mut cols = Vec::new();
    let mut dropped = Vec::new();
    let mut props = Vec::new();
    for (c, id) in m.item_ids().iter().enumerate() {
        let (mut seen, mut correct) = (0usize, 0usize);
        for r in 0..m.n_respondents() {
            if let Some(v) = m.get(r, c) {
                seen += 1;
                correct += v as usize;
            }
        }
        let reason = match (seen, correct) {
            (0, _) => Some(DropReason::NoResponses),
            (s, c) if c == s => Some(DropReason::AllCorrect),
            (_, 0) => Some(DropReason::AllIncorrect),
            _ => None,
        };
        match reason {
            Some(reason) => dropped.push(DroppedItem { item_id: id.clone(), reason }),
            None => {
                cols.push(c);
                props.push(correct as f64 / seen as f64);
            }
        }
    }
    if cols.is_empty() {
        return Err(Error::InsufficientData("all items are degenerate (all correct, all incorrect or empty)".into()));
    }
    if cols.len() < 2 {
        return Err(Error::InsufficientData(format!("need >= 2 non-degenerate items, got {}", cols.len())));
    }
    let obs = observations(m, &cols);
    if obs.len() < 2 {
        return Err(Error::InsufficientData(format!("need >= 2 respondents with responses, got {}", obs.len())));
    }
    let k = cols.len();
    let mut b: Vec<f64> = match &cfg.start {
        Some(s) if s.len() == k => s.clone(),
        Some(s) => return Err(Error::Config(format!("start has {} values for {k} items", s.len()))),
        None => props.iter().map(|&p| -logit(p)).collect(),
    };
    let mut a = match cfg.discrimination {
        DiscriminationMode::Fixed(a) => a,
        DiscriminationMode::EstimatedShared => 1.0,
    };
    let ln_w: Vec<f64> = quad.weights.iter().map(|w| w.ln()).collect();
    let q = quad.len();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut max_change = f64::INFINITY;
    while iterations < cfg.max_em_iterations {
        iterations += 1;
        let tables = LogTables::new(&b, a, &quad);
        let e = e_step(&obs, k, &tables, &ln_w, cfg.execution);
        trace.push(e.ll);

        let new_b: Vec<f64> = cfg
            .execution
            .map(k, |i| solve_item(&e.n[i * q..(i + 1) * q], &e.r[i * q..(i + 1) * q], &quad.nodes, a, b[i], cfg.newton_tolerance));
        max_change = b.iter().zip(&new_b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        b = new_b;
        if cfg.discrimination == DiscriminationMode::EstimatedShared {
            let new_a = solve_slope(&e, &b, &quad.nodes, a, cfg.newton_tolerance);
            max_change = max_change.max((new_a - a).abs());
            a = new_a;
        }
        if !b.iter().all(|v| v.is_finite()) || !a.is_finite() {
            return Err(Error::Numerical("EM produced non-finite parameters".into()));
        }
        if max_change < cfg.em_tolerance {
            converged = true;
            break;
        }
    }

    let estimate_slope = cfg.discrimination == DiscriminationMode::EstimatedShared;
    let (ll, se) = observed_information_se(&obs, &b, a, estimate_slope, &quad, cfg.execution);
    trace.push(ll);
    let (se_b, se_a) = match se {
        Some(mut s) => {
            let se_a = if estimate_slope { s.pop().flatten() } else { None };
            (s, se_a)
        }
        None => (vec![None; k], None),
    };

    Ok(RaschFit {
        item_ids: cols.iter().map(|&c| m.item_ids()[c].clone()).collect(),
        b,
        se_b,
        discrimination: a,
        se_discrimination: se_a,
        discrimination_mode: cfg.discrimination,
        quadrature: quad,
        log_likelihood: ll,
        log_likelihood_trace: trace,
        iterations,
        converged,
        max_change,
        n_respondents: obs.len(),
        dropped_items: dropped,
    })
}

/// Marginal log-likelihood and standard errors from the observed
/// information −Σ_r ∂² log L_r.
///
/// Per respondent, with posterior w over the grid and complete-data score
/// g_q and Hessian h_q at node q:
///   ∂² log L_r = Σ_q w_q (h_q + g_q g_qᵀ) − (Σ_q w_q g_q)(Σ_q w_q g_q)ᵀ.
fn observed_information_se(
    obs: &[Observations],
    b: &[f64],
    a: f64,
    with_slope: bool,
    quad: &Quadrature,
    exec: Execution,
) -> (f64, Option<Vec<Option<f64>>>) {
    let k = b.len();
    let dim = k + usize::from(with_slope);
    let q = quad.len();
    let tables = LogTables::new(b, a, quad);
    let ln_w: Vec<f64> = quad.weights.iter().map(|w| w.ln()).collect();
    let p: Vec<f64> = b.iter().flat_map(|&bi| quad.nodes.iter().map(move |&t| rasch_icc(t, bi, a))).collect();

    let blocks = obs.len().div_ceil(BLOCK);
    let partials = exec.map(blocks, |bk| {
        let mut hess = vec![0.0; dim * dim];
        let mut ll = 0.0;
        let mut post = vec![0.0; q];
        let mut g = vec![0.0; dim];
        let mut s = vec![0.0; dim];
        for o in &obs[bk * BLOCK..((bk + 1) * BLOCK).min(obs.len())] {
            ll += tables.posterior(o, &ln_w, &mut post);
            s.iter_mut().for_each(|v| *v = 0.0);
            for (j, &w) in post.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let t = quad.nodes[j];
                g.iter_mut().for_each(|v| *v = 0.0);
                for &(i, x) in o {
                    let pij = p[i * q + j];
                    let resid = f64::from(u8::from(x)) - pij;
                    g[i] = -a * resid;
                    let info = pij * (1.0 - pij);
                    // complete-data Hessian
                    hess[i * dim + i] -= w * a * a * info;
                    if with_slope {
                        let d = t - b[i];
                        g[k] += resid * d;
                        let cross = -resid + a * info * d;
                        hess[i * dim + k] += w * cross;
                        hess[k * dim + i] += w * cross;
                        hess[k * dim + k] -= w * info * d * d;
                    }
                }
                for u in 0..dim {
                    if g[u] == 0.0 {
                        continue;
                    }
                    s[u] += w * g[u];
                    for v in 0..dim {
                        hess[u * dim + v] += w * g[u] * g[v];
                    }
                }
            }
            for u in 0..dim {
                for v in 0..dim {
                    hess[u * dim + v] -= s[u] * s[v];
                }
            }
        }
        (ll, hess)
    });
    let mut ll = 0.0;
    let mut hess = vec![0.0; dim * dim];
    for (l, h) in partials {
        ll += l;
        for (a, b) in hess.iter_mut().zip(&h) {
            *a += b;
        }
    }
    let info = DMatrix::from_row_slice(dim, dim, &hess).map(|v| -v);
    let se = info.cholesky().map(|c| {
        let inv = c.inverse();
        (0..dim)
            .map(|i| {
                let v = inv[(i, i)];
                (v > 0.0 && v.is_finite()).then(|| v.sqrt())
            })
            .collect()
    });
    (ll, se)
}

/// Marginal log-likelihood of `m` restricted to `item_ids` under the given
/// parameters.
pub fn marginal_log_likelihood(m: &ResponseMatrix, item_ids: &[String], b: &[f64], a: f64, quad: &Quadrature) -> Result<f64> {
    if item_ids.len() != b.len() {
        return Err(Error::Shape(format!("{} items but {} difficulties", item_ids.len(), b.len())));
    }
    let cols = item_ids
        .iter()
        .map(|id| m.item_index(id).ok_or_else(|| Error::Misaligned(format!("item `{id}` not in matrix"))))
        .collect::<Result<Vec<_>>>()?;
    let obs = observations(m, &cols);
    let tables = LogTables::new(b, a, quad);
    let ln_w: Vec<f64> = quad.weights.iter().map(|w| w.ln()).collect();
    let mut post = vec![0.0; quad.len()];
    Ok(obs.iter().map(|o| tables.posterior(o, &ln_w, &mut post)).sum())
}

/// Expected a-posteriori ability per respondent (matrix row order).
///
/// Items of `m` not in the fit are ignored; a respondent without responses
/// on fitted items gets `None`.
pub fn eap_abilities(fit: &RaschFit, m: &ResponseMatrix, exec: Execution) -> Result<Vec<Option<f64>>> {
    if !fit.converged {
        return Err(Error::Numerical("EAP requires a converged fit".into()));
    }
    let mut fit_idx = Vec::new();
    let mut cols = Vec::new();
    for (i, id) in fit.item_ids.iter().enumerate() {
        if let Some(c) = m.item_index(id) {
            fit_idx.push(i);
            cols.push(c);
        }
    }
    let b: Vec<f64> = fit_idx.iter().map(|&i| fit.b[i]).collect();
    let tables = LogTables::new(&b, fit.discrimination, &fit.quadrature);
    let ln_w: Vec<f64> = fit.quadrature.weights.iter().map(|w| w.ln()).collect();
    Ok(exec.map(m.n_respondents(), |r| {
        let o: Observations = cols.iter().enumerate().filter_map(|(k, &c)| m.get(r, c).map(|v| (k, v == 1))).collect();
        if o.is_empty() {
            return None;
        }
        let mut post = vec![0.0; fit.quadrature.len()];
        tables.posterior(&o, &ln_w, &mut post);
        Some(post.iter().zip(&fit.quadrature.nodes).map(|(w, t)| w * t).sum())
    }))
}
