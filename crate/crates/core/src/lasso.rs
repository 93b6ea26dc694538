//! Adaptive-lasso fit of the full pooled-control model.
//!
//! The model for all control subjects has linear predictor
//! `(1, x')β + (1 − z)(1, x')γ`. The objective is
//!
//! ```text
//! (1/n_c) Σ loss_i(β, γ) + λ Σ_j w_j |γ_j|
//! ```
//!
//! with `w_j = 1/|γ̂_j^ML|` and `β` unpenalized. It is minimized by penalized
//! IRLS: each outer step forms the quadratic approximation of the loss and
//! solves the resulting lasso problem by cyclic coordinate descent, then
//! polishes the coordinate-descent answer by solving the stationarity
//! equations on the active set exactly.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::StudyDataset;
use crate::error::{Error, Result};
use crate::glm::{
    design_external_control, design_internal_control, design_pooled_control_full,
    design_pooled_control_ni, fit_mle, fit_mle_rows, GlmFit, Link,
};
use crate::linalg::{dot, RowMatrix};

pub const WEIGHT_CAP: f64 = 1e10;
pub const WEIGHT_CAP_BELOW: f64 = 1e-10;
pub const INNER_TOL: f64 = 1e-7;
pub const OUTER_TOL: f64 = 1e-8;
const MAX_OUTER: usize = 100;
const MAX_SWEEPS: usize = 100_000;

/// Adaptive-lasso weights on the interaction block, one per `γ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub w: Vec<f64>,
}

impl PenaltyWeights {
    pub fn len(&self) -> usize {
        self.w.len()
    }
    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
    pub fn all_capped(&self) -> bool {
        self.w.iter().all(|&w| w >= WEIGHT_CAP)
    }
}

/// `w_j = 1/|γ̂_j|`, capped at [`WEIGHT_CAP`] when `|γ̂_j| <` [`WEIGHT_CAP_BELOW`].
pub fn adaptive_weights(gamma_ml: &[f64]) -> PenaltyWeights {
    PenaltyWeights {
        w: gamma_ml
            .iter()
            .map(|g| {
                if g.abs() < WEIGHT_CAP_BELOW {
                    WEIGHT_CAP
                } else {
                    1.0 / g.abs()
                }
            })
            .collect(),
    }
}

/// Unpenalized fits that define the adaptive weights: `β̂^ML` from internal
/// controls, `β̂_EC^ML` from external controls and `γ̂^ML` their difference.
#[derive(Debug, Clone)]
pub struct MlDecomposition {
    pub internal: GlmFit,
    pub external: GlmFit,
    pub gamma_ml: Vec<f64>,
}

impl MlDecomposition {
    pub fn beta_ml(&self) -> &[f64] {
        &self.internal.coef
    }
}

pub fn ml_decomposition(d: &StudyDataset, link: Link) -> Result<MlDecomposition> {
    let internal = fit_mle(d, &design_internal_control(d), link)?;
    let external = fit_mle(d, &design_external_control(d), link)?;
    let gamma_ml = external
        .coef
        .iter()
        .zip(&internal.coef)
        .map(|(e, i)| e - i)
        .collect();
    Ok(MlDecomposition {
        internal,
        external,
        gamma_ml,
    })
}

/// Cross-validation summary along the λ path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTrace {
    pub lambdas: Vec<f64>,
    /// Held-out deviance per observation, pooled over folds.
    pub mean_deviance: Vec<f64>,
    /// Standard deviation of the per-fold mean deviance.
    pub fold_sd: Vec<f64>,
    pub folds: usize,
    pub chosen: usize,
}

/// Solution of the penalized problem at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub beta_vs: Vec<f64>,
    pub gamma_vs: Vec<f64>,
    pub lambda: f64,
    /// 0-based indices `j` with `γ_j ≠ 0` (index 0 is the intercept shift).
    pub active_set: Vec<usize>,
    pub cv_trace: Option<CvTrace>,
    pub objective: f64,
    pub weights: PenaltyWeights,
    pub link: Link,
    pub n_outer: usize,
}

impl PenalizedFit {
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.beta_vs.clone();
        t.extend_from_slice(&self.gamma_vs);
        t
    }
}

/// The penalized problem on a fixed set of control rows.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    x: RowMatrix,
    y: Vec<f64>,
    link: Link,
    /// Penalty factors over all columns (0 on the β block).
    factors: Vec<f64>,
    n_main: usize,
    gram_identity: Option<GaussianMoments>,
}

/// `H = X'X/n`, `c = X'y/n` and `y'y/n`, enough to evaluate the Gaussian loss.
#[derive(Debug, Clone)]
struct GaussianMoments {
    h: Vec<f64>,
    c: Vec<f64>,
    yy: f64,
}

impl GaussianMoments {
    fn mean_loss(&self, theta: &[f64]) -> f64 {
        let q = theta.len();
        let mut quad = 0.0;
        for (j, row) in self.h.chunks_exact(q).enumerate() {
            quad += theta[j] * dot(row, theta);
        }
        (0.5 * (quad - 2.0 * dot(&self.c, theta) + self.yy)).max(0.0)
    }
}

/// Coefficients and objective from one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub n_outer: usize,
}

impl PenalizedProblem {
    /// Problem over all control rows of `d`.
    pub fn new(d: &StudyDataset, link: Link, weights: &PenaltyWeights) -> Result<Self> {
        let design = design_pooled_control_full(d);
        let rows = design.rows(d);
        Self::from_rows(d, &rows, link, weights)
    }

    /// Problem over the given control rows.
    pub fn from_rows(
        d: &StudyDataset,
        rows: &[usize],
        link: Link,
        weights: &PenaltyWeights,
    ) -> Result<Self> {
        let design = design_pooled_control_full(d);
        if weights.len() != d.p() + 1 {
            return Err(Error::Config(format!(
                "expected {} penalty weights, got {}",
                d.p() + 1,
                weights.len()
            )));
        }
        if rows.is_empty() {
            return Err(Error::EmptyStratum {
                model: "penalized pooled-control".into(),
            });
        }
        let (x, y) = design.materialize_rows(d, rows);
        let n_main = d.p() + 1;
        let mut factors = vec![0.0; n_main];
        factors.extend_from_slice(&weights.w);
        let gram_identity = if link == Link::Identity {
            let n = x.nrows() as f64;
            let q = x.ncols();
            let mut h = vec![0.0; q * q];
            x.weighted_gram_buf(&vec![1.0 / n; x.nrows()], &mut h);
            let c = x.tr_mul_vec(&y).into_iter().map(|v| v / n).collect();
            let yy = dot(&y, &y) / n;
            Some(GaussianMoments { h, c, yy })
        } else {
            None
        };
        Ok(Self {
            x,
            y,
            link,
            factors,
            n_main,
            gram_identity,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn mean_loss(&self, theta: &[f64]) -> f64 {
        if let Some(g) = &self.gram_identity {
            return g.mean_loss(theta);
        }
        let eta = self.x.mul_vec(theta);
        self.y
            .iter()
            .zip(&eta)
            .map(|(&y, &e)| self.link.loss(y, e))
            .sum::<f64>()
            / self.n() as f64
    }

    pub fn penalty(&self, theta: &[f64], lambda: f64) -> f64 {
        lambda
            * self
                .factors
                .iter()
                .zip(theta)
                .map(|(f, t)| f * t.abs())
                .sum::<f64>()
    }

    pub fn objective(&self, theta: &[f64], lambda: f64) -> f64 {
        self.mean_loss(theta) + self.penalty(theta, lambda)
    }

    /// Gradient of the mean loss, `−(1/n) Σ (y_i − h(η_i)) d_i`.
    pub fn loss_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let eta = self.x.mul_vec(theta);
        let n = self.n() as f64;
        let resid: Vec<f64> = self
            .y
            .iter()
            .zip(&eta)
            .map(|(&y, &e)| -(y - self.link.inverse(e)) / n)
            .collect();
        self.x.tr_mul_vec(&resid)
    }

    /// Largest KKT violation at `theta` for penalty level `lambda`.
    pub fn kkt_violation(&self, theta: &[f64], lambda: f64) -> f64 {
        let g = self.loss_gradient(theta);
        let mut worst = 0.0_f64;
        for j in 0..theta.len() {
            let pen = lambda * self.factors[j];
            let v = if theta[j] != 0.0 {
                (g[j] + pen * theta[j].signum()).abs()
            } else {
                (g[j].abs() - pen).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Smallest λ at which `γ = 0` solves the problem, given the
    /// no-interaction coefficients `beta_ni` (which zero the β-block gradient).
    pub fn lambda_max(&self, beta_ni: &[f64]) -> f64 {
        let mut theta = beta_ni.to_vec();
        theta.resize(self.width(), 0.0);
        let g = self.loss_gradient(&theta);
        let mut lmax = 0.0_f64;
        for j in self.n_main..self.width() {
            lmax = lmax.max(g[j].abs() / self.factors[j]);
        }
        lmax * (1.0 + 1e-8)
    }

    /// Minimizes the penalized objective at `lambda`, starting from `warm`.
    pub fn solve(&self, lambda: f64, warm: &[f64]) -> Result<Solution> {
        let q = self.width();
        let n = self.n();
        let pen: Vec<f64> = self.factors.iter().map(|f| lambda * f).collect();
        let mut theta = warm.to_vec();

        if let Some(g) = &self.gram_identity {
            theta = coordinate_descent(&g.h, &g.c, &pen, theta, q);
            let obj = self.objective(&theta, lambda);
            return Ok(Solution {
                theta,
                objective: obj,
                n_outer: 1,
            });
        }

        let mut eta = vec![0.0; n];
        let mut tail = vec![0.0; n];
        let mut obj = self.logistic_loss(&theta, &mut eta, &mut tail) + self.penalty(&theta, lambda);
        let mut cand_eta = vec![0.0; n];
        let mut cand_tail = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut h = vec![0.0; q * q];
        let mut wz = vec![0.0; n];
        let inv_n = 1.0 / n as f64;
        for outer in 1..=MAX_OUTER {
            // quadratic model of the mean loss around theta:
            // ½ θ'Hθ − c'θ with H = X'WX/n, c = X'(Wη + y − μ)/n
            for i in 0..n {
                let e = tail[i];
                let mu = if eta[i] >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                let wi = (e / ((1.0 + e) * (1.0 + e))).max(1e-10);
                w[i] = wi * inv_n;
                wz[i] = (wi * eta[i] + self.y[i] - mu) * inv_n;
            }
            self.x.weighted_gram_buf(&w, &mut h);
            let c = self.x.tr_mul_vec(&wz);
            let target = coordinate_descent(&h, &c, &pen, theta.clone(), q);
            let full_step = target
                .iter()
                .zip(&theta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);

            // the quadratic step is a descent direction for the convex
            // objective; halve it if the full step overshoots
            let mut t = 1.0;
            let mut cand: Vec<f64>;
            let mut new_obj;
            let mut halvings = 0;
            loop {
                cand = theta
                    .iter()
                    .zip(&target)
                    .map(|(a, b)| if t == 1.0 { *b } else { a + t * (b - a) })
                    .collect();
                new_obj = self.logistic_loss(&cand, &mut cand_eta, &mut cand_tail)
                    + self.penalty(&cand, lambda);
                if new_obj.is_finite() && new_obj <= obj + 1e-15 * obj.abs().max(1.0) {
                    break;
                }
                halvings += 1;
                if halvings > 30 || full_step < 1e-7 {
                    break;
                }
                t *= 0.5;
            }
            let delta = cand
                .iter()
                .zip(&theta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if !(new_obj.is_finite() && new_obj <= obj + 1e-15 * obj.abs().max(1.0)) {
                if delta < 1e-6 {
                    return Ok(Solution {
                        theta,
                        objective: obj,
                        n_outer: outer,
                    });
                }
                break;
            }
            let rel = (obj - new_obj).abs() / (new_obj.abs() + 0.1);
            theta = cand;
            obj = new_obj;
            std::mem::swap(&mut eta, &mut cand_eta);
            std::mem::swap(&mut tail, &mut cand_tail);
            if theta.iter().any(|v| v.abs() > crate::glm::SEPARATION_BOUND) {
                return Err(Error::Separation {
                    model: "penalized pooled-control".into(),
                    bound: crate::glm::SEPARATION_BOUND,
                });
            }
            if rel < OUTER_TOL && delta < 1e-7 {
                return Ok(Solution {
                    theta,
                    objective: obj,
                    n_outer: outer,
                });
            }
        }
        Err(Error::NotConverged {
            model: "penalized pooled-control".into(),
            iterations: MAX_OUTER,
        })
    }

    /// Mean logistic loss at `theta`, leaving `η` and `e^{−|η|}` per row in
    /// the buffers.
    fn logistic_loss(&self, theta: &[f64], eta: &mut [f64], tail: &mut [f64]) -> f64 {
        self.x.mul_vec_into(theta, eta);
        let mut sum = 0.0;
        for i in 0..eta.len() {
            let u = eta[i];
            let e = (-u.abs()).exp();
            tail[i] = e;
            sum += u.max(0.0) + e.ln_1p() - self.y[i] * u;
        }
        sum / eta.len() as f64
    }

    /// Mean held-out deviance of `theta` over rows of `other`.
    pub fn mean_deviance(&self, theta: &[f64]) -> f64 {
        if let Some(g) = &self.gram_identity {
            return 2.0 * g.mean_loss(theta);
        }
        let eta = self.x.mul_vec(theta);
        self.y
            .iter()
            .zip(&eta)
            .map(|(&y, &e)| self.link.unit_deviance(y, e))
            .sum::<f64>()
            / self.n() as f64
    }

    fn to_fit(&self, sol: Solution, lambda: f64, weights: &PenaltyWeights) -> PenalizedFit {
        let beta_vs = sol.theta[..self.n_main].to_vec();
        let gamma_vs = sol.theta[self.n_main..].to_vec();
        let active_set = gamma_vs
            .iter()
            .enumerate()
            .filter(|(_, g)| **g != 0.0)
            .map(|(j, _)| j)
            .collect();
        PenalizedFit {
            beta_vs,
            gamma_vs,
            lambda,
            active_set,
            cv_trace: None,
            objective: sol.objective,
            weights: weights.clone(),
            link: self.link,
            n_outer: sol.n_outer,
        }
    }
}

#[inline]
fn soft_threshold(r: f64, t: f64) -> f64 {
    if r > t {
        r - t
    } else if r < -t {
        r + t
    } else {
        0.0
    }
}

/// Minimizes `½θ'Hθ − c'θ + Σ pen_j |θ_j|` (H row-major `q×q`) from `theta`.
/// Every few sweeps the current support is handed to [`polish`]; a certified
/// exact solution ends the descent early.
fn coordinate_descent(h: &[f64], c: &[f64], pen: &[f64], mut theta: Vec<f64>, q: usize) -> Vec<f64> {
    // g = c − Hθ
    let mut g: Vec<f64> = (0..q)
        .map(|j| c[j] - (0..q).map(|k| h[j * q + k] * theta[k]).sum::<f64>())
        .collect();
    for sweep in 0..MAX_SWEEPS {
        let mut max_delta = 0.0_f64;
        for j in 0..q {
            let hjj = h[j * q + j];
            if hjj <= 0.0 {
                continue;
            }
            let old = theta[j];
            let r = g[j] + hjj * old;
            let new = soft_threshold(r, pen[j]) / hjj;
            if new != old {
                let delta = new - old;
                for k in 0..q {
                    g[k] -= h[k * q + j] * delta;
                }
                theta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let done = max_delta < INNER_TOL;
        if done || sweep % 4 == 3 {
            if let Some(exact) = polish(h, c, pen, &theta, q) {
                return exact;
            }
        }
        if done {
            break;
        }
    }
    theta
}

/// Solves the stationarity equations of the quadratic lasso problem on the
/// support and sign pattern of `theta`. Returns the solution only if it keeps
/// every sign and satisfies the conditions for the zero coordinates.
fn polish(h: &[f64], c: &[f64], pen: &[f64], theta: &[f64], q: usize) -> Option<Vec<f64>> {
    let active: Vec<usize> = (0..q).filter(|&j| theta[j] != 0.0 || pen[j] == 0.0).collect();
    let k = active.len();
    let mut out = vec![0.0; q];
    if k > 0 {
        let mut a = DMatrix::zeros(k, k);
        let mut b = nalgebra::DVector::zeros(k);
        for (u, &j) in active.iter().enumerate() {
            for (v, &l) in active.iter().enumerate() {
                a[(u, v)] = h[j * q + l];
            }
            let s = if pen[j] == 0.0 { 0.0 } else { theta[j].signum() };
            b[u] = c[j] - pen[j] * s;
        }
        let sol = a.cholesky()?.solve(&b);
        for (u, &j) in active.iter().enumerate() {
            if pen[j] != 0.0 && (sol[u] == 0.0 || sol[u].signum() != theta[j].signum()) {
                return None;
            }
            out[j] = sol[u];
        }
    }
    for j in 0..q {
        if active.contains(&j) {
            continue;
        }
        let grad: f64 = c[j] - (0..q).map(|l| h[j * q + l] * out[l]).sum::<f64>();
        if grad.abs() > pen[j] {
            return None;
        }
    }
    Some(out)
}

/// Single-λ penalized fit over all control rows, warm-started at the
/// no-interaction solution.
pub fn fit_penalized(
    d: &StudyDataset,
    link: Link,
    weights: &PenaltyWeights,
    lambda: f64,
) -> Result<PenalizedFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let problem = PenalizedProblem::new(d, link, weights)?;
    let ni = fit_mle(d, &design_pooled_control_ni(d), link)?;
    let mut warm = ni.coef.clone();
    warm.resize(problem.width(), 0.0);
    let sol = problem.solve(lambda, &warm)?;
    Ok(problem.to_fit(sol, lambda, weights))
}

/// Descending λ grid for the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    pub lambdas: Vec<f64>,
    pub lambda_max: f64,
    /// Set when every weight sits at the cap or `λ_max = 0`; the path is
    /// then the single value `λ_max`.
    pub degenerate: bool,
}

pub const PATH_LENGTH: usize = 100;
pub const PATH_MIN_RATIO: f64 = 1e-4;

/// 100 log-spaced values from `λ_max` down to `1e-4·λ_max`.
pub fn lambda_path(weights: &PenaltyWeights, d: &StudyDataset, link: Link) -> Result<LambdaPath> {
    let problem = PenalizedProblem::new(d, link, weights)?;
    let ni = fit_mle(d, &design_pooled_control_ni(d), link)?;
    Ok(path_from_max(
        problem.lambda_max(&ni.coef),
        weights.all_capped(),
    ))
}

fn path_from_max(lambda_max: f64, all_capped: bool) -> LambdaPath {
    if all_capped || lambda_max <= 0.0 || !lambda_max.is_finite() {
        return LambdaPath {
            lambdas: vec![lambda_max.max(0.0)],
            lambda_max: lambda_max.max(0.0),
            degenerate: true,
        };
    }
    let ratio = PATH_MIN_RATIO.powf(1.0 / (PATH_LENGTH - 1) as f64);
    let lambdas = (0..PATH_LENGTH)
        .map(|k| lambda_max * ratio.powi(k as i32))
        .collect();
    LambdaPath {
        lambdas,
        lambda_max,
        degenerate: false,
    }
}

/// Solves along the whole path with warm starts, beginning at the
/// no-interaction solution.
fn solve_path(problem: &PenalizedProblem, beta_ni: &[f64], lambdas: &[f64]) -> Result<Vec<Solution>> {
    let mut warm = beta_ni.to_vec();
    warm.resize(problem.width(), 0.0);
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let sol = problem.solve(lambda, &warm)?;
        warm.clone_from(&sol.theta);
        out.push(sol);
    }
    Ok(out)
}

/// Fold labels for control rows, stratified by source: each source's rows
/// are shuffled and dealt round-robin, continuing the count across sources.
pub fn stratified_folds<R: Rng + ?Sized>(
    d: &StudyDataset,
    k: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let mut internal = d.indices_where(|r| r.z == 1 && r.a == 0);
    let mut external = d.indices_where(|r| r.z == 0);
    let n_c = internal.len() + external.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > n_c {
        return Err(Error::Config(format!(
            "{k} folds requested for {n_c} control rows"
        )));
    }
    internal.shuffle(rng);
    external.shuffle(rng);
    let mut labels = Vec::with_capacity(n_c);
    for (pos, &i) in internal.iter().chain(external.iter()).enumerate() {
        labels.push((i, pos % k));
    }
    labels.sort_unstable();
    Ok(labels)
}

/// K-fold cross-validation of λ over control rows (folds stratified by
/// source), held-out deviance loss and the minimizing λ; returns the
/// full-data fit at the chosen λ with the trace attached.
pub fn cross_validate<R: Rng + ?Sized>(
    d: &StudyDataset,
    link: Link,
    weights: &PenaltyWeights,
    path: &LambdaPath,
    k: usize,
    rng: &mut R,
) -> Result<PenalizedFit> {
    let labels = stratified_folds(d, k, rng)?;
    let full = PenalizedProblem::new(d, link, weights)?;
    let ni = fit_mle(d, &design_pooled_control_ni(d), link)?;
    let full_path = solve_path(&full, &ni.coef, &path.lambdas)?;

    let n_l = path.lambdas.len();
    let mut total = vec![0.0; n_l];
    let mut fold_means = vec![Vec::with_capacity(k); n_l];
    for fold in 0..k {
        let train: Vec<usize> = labels.iter().filter(|l| l.1 != fold).map(|l| l.0).collect();
        let test: Vec<usize> = labels.iter().filter(|l| l.1 == fold).map(|l| l.0).collect();
        let has_ic = train.iter().any(|&i| d.z(i) == 1);
        let has_ec = train.iter().any(|&i| d.z(i) == 0);
        if !has_ic || !has_ec {
            return Err(Error::Config(format!(
                "fold {fold}: training set lacks {} controls",
                if has_ic { "external" } else { "internal" }
            )));
        }
        let train_problem = PenalizedProblem::from_rows(d, &train, link, weights)?;
        let test_problem = PenalizedProblem::from_rows(d, &test, link, weights)?;
        let ni_train = fit_mle_rows(d, &design_pooled_control_ni(d), link, train.clone())?;
        let sols = solve_path(&train_problem, &ni_train.coef, &path.lambdas)?;
        for (l, sol) in sols.iter().enumerate() {
            let dev = test_problem.mean_deviance(&sol.theta);
            total[l] += dev * test.len() as f64;
            fold_means[l].push(dev);
        }
    }
    let n_c = labels.len() as f64;
    let mean_deviance: Vec<f64> = total.iter().map(|t| t / n_c).collect();
    let fold_sd = fold_means
        .iter()
        .map(|m| {
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m.len() - 1) as f64).sqrt()
        })
        .collect();
    let mut chosen = 0;
    for l in 1..n_l {
        if mean_deviance[l] < mean_deviance[chosen] {
            chosen = l;
        }
    }
    let lambda = path.lambdas[chosen];
    let mut fit = full.to_fit(full_path[chosen].clone(), lambda, weights);
    fit.cv_trace = Some(CvTrace {
        lambdas: path.lambdas.clone(),
        mean_deviance,
        fold_sd,
        folds: k,
        chosen,
    });
    Ok(fit)
}

/// Settings for the λ selection inside GC-VS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { folds: 10 }
    }
}

/// Weights from the unpenalized fits, the λ path, and cross-validated fit.
pub fn select_and_fit<R: Rng + ?Sized>(
    d: &StudyDataset,
    link: Link,
    opts: &CvOptions,
    rng: &mut R,
) -> Result<PenalizedFit> {
    let ml = ml_decomposition(d, link)?;
    let weights = adaptive_weights(&ml.gamma_ml);
    let path = lambda_path(&weights, d, link)?;
    cross_validate(d, link, &weights, &path, opts.folds, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_reciprocal_magnitudes() {
        assert_eq!(adaptive_weights(&[0.5, -0.25]).w, vec![2.0, 4.0]);
        let w = adaptive_weights(&[0.0, 1e-11, -1e-11]);
        assert_eq!(w.w, vec![WEIGHT_CAP; 3]);
        assert!(w.all_capped());
    }

    #[test]
    fn soft_threshold_gives_true_zeros() {
        assert_eq!(soft_threshold(0.3, 0.5).to_bits(), 0.0f64.to_bits());
        assert_eq!(soft_threshold(-0.3, 0.5).to_bits(), 0.0f64.to_bits());
        assert_eq!(soft_threshold(0.8, 0.5), 0.8 - 0.5);
        assert_eq!(soft_threshold(-0.8, 0.5), -0.8 + 0.5);
    }

    #[test]
    fn path_has_constant_ratio() {
        let p = path_from_max(2.0, false);
        assert_eq!(p.lambdas.len(), 100);
        assert_eq!(p.lambdas[0], 2.0);
        assert!((p.lambdas[99] - 2e-4).abs() < 1e-15);
        let r0 = p.lambdas[1] / p.lambdas[0];
        for w in p.lambdas.windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-12);
        }
        let degenerate = path_from_max(2.0, true);
        assert!(degenerate.degenerate);
        assert_eq!(degenerate.lambdas, vec![2.0]);
    }

    #[test]
    fn quadratic_lasso_matches_closed_form_in_one_dimension() {
        // ½ h θ² − c θ + pen |θ|  →  θ = S(c, pen)/h
        let out = coordinate_descent(&[2.0], &[3.0], &[1.0], vec![0.0], 1);
        assert!((out[0] - 1.0).abs() < 1e-15);
        let out = coordinate_descent(&[2.0], &[0.5], &[1.0], vec![5.0], 1);
        assert_eq!(out, vec![0.0]);
    }
}
