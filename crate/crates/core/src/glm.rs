//! Maximum-likelihood fitting of canonical-link GLMs on design strata.
//!
//! Two families are supported: Gaussian with the identity link and Bernoulli
//! with the logit link. With a canonical link the score equations are
//! `Σ (y_i − h(d_i'θ)) d_i = 0`, so every converged fit leaves residuals
//! orthogonal to each design column; [`GlmFit::max_scaled_score`] records how
//! close the solution is to that identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{OutcomeKind, RowRef, StudyDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, spd_solve, RowMatrix};

pub const MAX_IRLS_ITER: usize = 100;
pub const DEVIANCE_TOL: f64 = 1e-8;
/// Logit fits fail once any coefficient leaves `[-30, 30]`.
pub const SEPARATION_BOUND: f64 = 30.0;
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

impl Link {
    /// Canonical link for an outcome kind.
    pub fn for_outcome(kind: OutcomeKind) -> Self {
        match kind {
            OutcomeKind::Continuous => Link::Identity,
            OutcomeKind::Binary => Link::Logit,
        }
    }

    /// Inverse link `h`.
    #[inline]
    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Link::Identity => u,
            Link::Logit => expit(u),
        }
    }

    /// Derivative `ḣ` of the inverse link.
    #[inline]
    pub fn inverse_derivative(self, u: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => {
                let e = (-u.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    /// Per-observation negative log-likelihood up to terms free of `eta`
    /// (half squared error for the Gaussian family).
    #[inline]
    pub fn loss(self, y: f64, eta: f64) -> f64 {
        match self {
            Link::Identity => 0.5 * (y - eta) * (y - eta),
            Link::Logit => log1pexp(eta) - y * eta,
        }
    }

    /// Unit deviance; twice [`Link::loss`] for binary `y`.
    #[inline]
    pub fn unit_deviance(self, y: f64, eta: f64) -> f64 {
        match self {
            Link::Identity => (y - eta) * (y - eta),
            Link::Logit => 2.0 * (log1pexp(eta) - y * eta),
        }
    }
}

#[inline]
pub fn expit(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^u)` without overflow.
#[inline]
pub fn log1pexp(u: f64) -> f64 {
    if u > 35.0 {
        u
    } else if u < -35.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

/// Rows a model is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stratum {
    InternalControl,
    ExternalControl,
    InternalTreated,
    AllControl,
}

impl Stratum {
    pub fn contains(self, r: RowRef<'_>) -> bool {
        match self {
            Stratum::InternalControl => r.z == 1 && r.a == 0,
            Stratum::ExternalControl => r.z == 0,
            Stratum::InternalTreated => r.z == 1 && r.a == 1,
            Stratum::AllControl => r.a == 0,
        }
    }
}

/// A row predicate plus a column map: main columns `(1, x')` followed by
/// source interactions `(1 − z)·(1, x')_j` for each `j` in `interactions`.
///
/// Interaction indices are 0-based over `(1, x1, ..., xp)`, so index 0 is the
/// intercept shift.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesignSpec {
    pub stratum: Stratum,
    pub interactions: Vec<usize>,
}

impl DesignSpec {
    pub fn new(stratum: Stratum, mut interactions: Vec<usize>) -> Self {
        interactions.sort_unstable();
        interactions.dedup();
        Self {
            stratum,
            interactions,
        }
    }

    pub fn width(&self, p: usize) -> usize {
        p + 1 + self.interactions.len()
    }

    pub fn label(&self) -> String {
        match (self.stratum, self.interactions.is_empty()) {
            (Stratum::InternalControl, true) => "internal-control".into(),
            (Stratum::ExternalControl, true) => "external-control".into(),
            (Stratum::InternalTreated, true) => "internal-treated".into(),
            (Stratum::AllControl, true) => "pooled-control (no interactions)".into(),
            (s, false) => format!("{s:?} with interactions {:?}", self.interactions),
        }
    }

    /// Writes the design row for `r` into `out` (length `width(p)`).
    pub fn fill_row(&self, r: RowRef<'_>, out: &mut [f64]) {
        let p = r.x.len();
        out[0] = 1.0;
        out[1..=p].copy_from_slice(r.x);
        let ext = if r.z == 0 { 1.0 } else { 0.0 };
        for (k, &j) in self.interactions.iter().enumerate() {
            let v = if j == 0 { 1.0 } else { r.x[j - 1] };
            out[p + 1 + k] = ext * v;
        }
    }

    pub fn rows(&self, d: &StudyDataset) -> Vec<usize> {
        d.indices_where(|r| self.stratum.contains(r))
    }

    /// Design matrix and response over the given rows.
    pub fn materialize_rows(&self, d: &StudyDataset, rows: &[usize]) -> (RowMatrix, Vec<f64>) {
        let q = self.width(d.p());
        let mut data = vec![0.0; rows.len() * q];
        let mut y = Vec::with_capacity(rows.len());
        for (k, &i) in rows.iter().enumerate() {
            let r = d.row(i);
            self.fill_row(r, &mut data[k * q..(k + 1) * q]);
            y.push(r.y);
        }
        (RowMatrix::new(rows.len(), q, data), y)
    }
}

pub fn design_internal_control(_d: &StudyDataset) -> DesignSpec {
    DesignSpec::new(Stratum::InternalControl, vec![])
}
pub fn design_external_control(_d: &StudyDataset) -> DesignSpec {
    DesignSpec::new(Stratum::ExternalControl, vec![])
}
pub fn design_internal_treated(_d: &StudyDataset) -> DesignSpec {
    DesignSpec::new(Stratum::InternalTreated, vec![])
}
/// All controls with the complete interaction block (`J = p + 1`).
pub fn design_pooled_control_full(d: &StudyDataset) -> DesignSpec {
    DesignSpec::new(Stratum::AllControl, (0..=d.p()).collect())
}
/// All controls, no interactions.
pub fn design_pooled_control_ni(_d: &StudyDataset) -> DesignSpec {
    DesignSpec::new(Stratum::AllControl, vec![])
}
/// All controls with interactions restricted to `active` (0-based indices).
pub fn design_oracle(d: &StudyDataset, active: &[usize]) -> Result<DesignSpec> {
    if let Some(&bad) = active.iter().find(|&&j| j > d.p()) {
        return Err(Error::Config(format!(
            "interaction index {bad} out of range 0..={}",
            d.p()
        )));
    }
    Ok(DesignSpec::new(Stratum::AllControl, active.to_vec()))
}

/// Result of one maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coef: Vec<f64>,
    pub link: Link,
    pub design: DesignSpec,
    /// Dataset rows in the fitted stratum.
    pub rows: Vec<usize>,
    pub converged: bool,
    pub n_iter: usize,
    pub deviance: f64,
    /// Deviance after each accepted iterate, starting from the initial point.
    pub deviance_trace: Vec<f64>,
    /// `Σ_i ḣ(d_i'θ̂) d_i d_i'` over the stratum.
    pub info_matrix: DMatrix<f64>,
    /// `max_j |Σ_i (y_i − h(d_i'θ̂)) d_ij| / n_stratum`.
    pub max_scaled_score: f64,
}

impl GlmFit {
    /// The `(1, x')` block of the coefficients.
    pub fn main_coef(&self) -> &[f64] {
        let q = self.coef.len() - self.design.interactions.len();
        &self.coef[..q]
    }

    pub fn linear_predictor(&self, r: RowRef<'_>) -> f64 {
        let mut buf = vec![0.0; self.coef.len()];
        self.design.fill_row(r, &mut buf);
        dot(&buf, &self.coef)
    }
}

/// Outcome of IRLS on an explicit design matrix.
#[derive(Debug, Clone)]
pub struct IrlsFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    pub deviance: f64,
    pub deviance_trace: Vec<f64>,
    pub info_matrix: DMatrix<f64>,
    pub max_scaled_score: f64,
}

fn deviance(x: &RowMatrix, y: &[f64], coef: &[f64], link: Link, eta: &mut [f64]) -> f64 {
    x.mul_vec_into(coef, eta);
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| link.unit_deviance(yi, e))
        .sum()
}

/// Newton–Raphson (equivalently IRLS, since the link is canonical) with
/// step-halving. Stops when the relative deviance change is below
/// [`DEVIANCE_TOL`] and the last step is negligible.
pub fn irls(x: &RowMatrix, y: &[f64], link: Link, model: &str) -> Result<IrlsFit> {
    let n = x.nrows();
    let q = x.ncols();
    if n == 0 {
        return Err(Error::EmptyStratum {
            model: model.to_string(),
        });
    }
    let rank = x.rank(RANK_TOL);
    if rank < q {
        return Err(Error::RankDeficient {
            model: model.to_string(),
            rank,
            cols: q,
        });
    }

    let mut coef = vec![0.0; q];
    let mut eta = vec![0.0; n];
    let mut dev = deviance(x, y, &coef, link, &mut eta);
    let mut trace = vec![dev];
    let mut w = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut cand = vec![0.0; q];
    let mut converged = false;
    let mut n_iter = 0;

    while n_iter < MAX_IRLS_ITER {
        n_iter += 1;
        for i in 0..n {
            w[i] = link.inverse_derivative(eta[i]);
            resid[i] = y[i] - link.inverse(eta[i]);
        }
        let info = x.weighted_gram(&w);
        let score = x.tr_mul_vec(&resid);
        let step = spd_solve(&info, &score, model)?;

        let mut t = 1.0;
        let mut new_dev;
        let mut halvings = 0;
        loop {
            for j in 0..q {
                cand[j] = coef[j] + t * step[j];
            }
            new_dev = deviance(x, y, &cand, link, &mut eta);
            if new_dev.is_finite() && new_dev <= dev {
                break;
            }
            halvings += 1;
            if halvings > 30 {
                break;
            }
            t *= 0.5;
        }
        let step_size = step
            .iter()
            .zip(&coef)
            .map(|(s, c)| (t * s).abs() / (1.0 + c.abs()))
            .fold(0.0, f64::max);

        if !(new_dev.is_finite() && new_dev <= dev) {
            // No decrease is possible: either we are at the optimum to
            // machine precision or the problem is ill-posed.
            x.mul_vec_into(&coef, &mut eta);
            if step_size < 1e-6 {
                converged = true;
            }
            break;
        }

        coef.copy_from_slice(&cand);
        if link == Link::Logit && coef.iter().any(|c| c.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation {
                model: model.to_string(),
                bound: SEPARATION_BOUND,
            });
        }
        let rel = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        trace.push(dev);
        if rel < DEVIANCE_TOL && step_size < 1e-6 {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NotConverged {
            model: model.to_string(),
            iterations: n_iter,
        });
    }

    for i in 0..n {
        w[i] = link.inverse_derivative(eta[i]);
        resid[i] = y[i] - link.inverse(eta[i]);
    }
    let info_matrix = x.weighted_gram(&w);
    let max_scaled_score = x
        .tr_mul_vec(&resid)
        .iter()
        .fold(0.0_f64, |m, s| m.max(s.abs()))
        / n as f64;

    Ok(IrlsFit {
        coef,
        converged,
        n_iter,
        deviance: dev,
        deviance_trace: trace,
        info_matrix,
        max_scaled_score,
    })
}

/// Maximum-likelihood fit of `design` on its stratum of `d`.
pub fn fit_mle(d: &StudyDataset, design: &DesignSpec, link: Link) -> Result<GlmFit> {
    let rows = design.rows(d);
    fit_mle_rows(d, design, link, rows)
}

/// Maximum-likelihood fit of `design` on an explicit row set.
pub fn fit_mle_rows(
    d: &StudyDataset,
    design: &DesignSpec,
    link: Link,
    rows: Vec<usize>,
) -> Result<GlmFit> {
    let label = design.label();
    if rows.is_empty() {
        return Err(Error::EmptyStratum { model: label });
    }
    let (x, y) = design.materialize_rows(d, &rows);
    let fit = irls(&x, &y, link, &label)?;
    Ok(GlmFit {
        coef: fit.coef,
        link,
        design: design.clone(),
        rows,
        converged: fit.converged,
        n_iter: fit.n_iter,
        deviance: fit.deviance,
        deviance_trace: fit.deviance_trace,
        info_matrix: fit.info_matrix,
        max_scaled_score: fit.max_scaled_score,
    })
}

/// `h((1, x')θ + extra'θ_extra)` for a fitted model. `extra_cols` supplies the
/// interaction values when the design has any; otherwise they are zero.
pub fn fitted_mean(fit: &GlmFit, x: &[f64], extra_cols: Option<&[f64]>) -> f64 {
    let main = fit.main_coef();
    assert_eq!(main.len(), x.len() + 1, "covariate length must match design");
    let mut eta = main[0] + dot(&main[1..], x);
    if let Some(extra) = extra_cols {
        eta += dot(&fit.coef[main.len()..], extra);
    }
    fit.link.inverse(eta)
}

/// Recomputes the scaled score `max_j |Σ (y − h(d'θ)) d_j| / n` of a fit.
pub fn scaled_score(d: &StudyDataset, fit: &GlmFit) -> f64 {
    let q = fit.coef.len();
    let mut buf = vec![0.0; q];
    let mut score = vec![0.0; q];
    for &i in &fit.rows {
        let r = d.row(i);
        fit.design.fill_row(r, &mut buf);
        let resid = r.y - fit.link.inverse(dot(&buf, &fit.coef));
        for j in 0..q {
            score[j] += resid * buf[j];
        }
    }
    score.iter().fold(0.0_f64, |m, s| m.max(s.abs())) / fit.rows.len() as f64
}
