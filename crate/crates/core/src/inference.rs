//! Standard errors and Wald intervals.
//!
//! The analytic path builds a per-subject influence value for each of
//! `μ̂₀`, `μ̂₁` and `δ̂` and reports `sqrt(Var_n(IF) / n)`. The bootstrap path
//! resamples within the three design strata and reruns the full pipeline.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::StudyDataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate, ControlFit, EffectMeasure, MethodKind, PointEstimates};
use crate::glm::{
    design_internal_control, design_oracle, design_pooled_control_ni, fit_mle, GlmFit, Link,
};
use crate::lasso::{select_and_fit, CvOptions};
use crate::linalg::{dot, spd_inverse};
use crate::rng::stream;

/// Largest share of bootstrap replicates allowed to fail.
pub const BOOT_FAILURE_LIMIT: f64 = 0.05;

/// Which control-model estimating equation supplies `ψ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PsiVariant {
    /// Internal controls, `(1, x')`.
    Rct,
    /// All controls, `(1, x')`.
    Ni,
    /// All controls, interactions restricted to the selected set.
    VsOracle(Vec<usize>),
}

/// The unpenalized fit whose estimating equation defines `ψ` for `variant`.
pub fn psi_fit(d: &StudyDataset, variant: &PsiVariant, link: Link) -> Result<GlmFit> {
    match variant {
        PsiVariant::Rct => fit_mle(d, &design_internal_control(d), link),
        PsiVariant::Ni => fit_mle(d, &design_pooled_control_ni(d), link),
        PsiVariant::VsOracle(active) => fit_mle(d, &design_oracle(d, active)?, link),
    }
}

/// Per-subject `[M̂⁻¹ U_i]` restricted to the `(1, x')` block.
#[derive(Debug, Clone, PartialEq)]
pub struct Psi {
    /// `M̂⁻¹` for the whole design, with `M̂ = n⁻¹ Σ s_i ḣ d_i d_i'`.
    pub m_inv: DMatrix<f64>,
    /// `m_hat` itself, kept for checks.
    pub m_hat: DMatrix<f64>,
    /// One row per subject; zero outside the fitted stratum.
    pub values: Vec<Vec<f64>>,
}

pub fn influence_psi(d: &StudyDataset, fit: &GlmFit) -> Result<Psi> {
    let n = d.n() as f64;
    let q = fit.coef.len();
    let k = d.p() + 1;
    let m_hat = &fit.info_matrix / n;
    let m_inv = spd_inverse(&m_hat, &format!("{} information", fit.design.label()))?;
    let mut values = vec![vec![0.0; k]; d.n()];
    let mut buf = vec![0.0; q];
    for &i in &fit.rows {
        let r = d.row(i);
        fit.design.fill_row(r, &mut buf);
        let resid = r.y - fit.link.inverse(dot(&buf, &fit.coef));
        for (j, v) in values[i].iter_mut().enumerate() {
            let mut s = 0.0;
            for l in 0..q {
                s += m_inv[(j, l)] * buf[l];
            }
            *v = s * resid;
        }
    }
    Ok(Psi {
        m_inv,
        m_hat,
        values,
    })
}

/// `r̂(coef) = n₁⁻¹ Σ_{z=1} ḣ((1, x')coef)(1, x')'`.
pub fn r_hat(d: &StudyDataset, coef: &[f64], link: Link) -> Vec<f64> {
    let mut r = vec![0.0; coef.len()];
    let mut n1 = 0usize;
    for i in 0..d.n() {
        if d.z(i) != 1 {
            continue;
        }
        let x = d.x(i);
        let w = link.inverse_derivative(coef[0] + dot(&coef[1..], x));
        r[0] += w;
        for (rj, xj) in r[1..].iter_mut().zip(x) {
            *rj += w * xj;
        }
        n1 += 1;
    }
    r.iter_mut().for_each(|v| *v /= n1 as f64);
    r
}

/// Everything the plug-in variance of one GC arm mean uses.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceIngredients {
    pub tau_hat: f64,
    pub r: Vec<f64>,
    pub psi: Psi,
    /// `Z_i{h((1, x_i')coef) − μ̂}/τ̂ + r̂'ψ_i`.
    pub influence: Vec<f64>,
}

/// Influence values of a GC arm mean with plug-in coefficients `coef`.
pub fn gc_ingredients(
    d: &StudyDataset,
    coef: &[f64],
    mu: f64,
    link: Link,
    psi: Psi,
) -> InfluenceIngredients {
    let tau_hat = d.n1() as f64 / d.n() as f64;
    let r = r_hat(d, coef, link);
    let influence = (0..d.n())
        .map(|i| {
            let lead = if d.z(i) == 1 {
                (link.inverse(coef[0] + dot(&coef[1..], d.x(i))) - mu) / tau_hat
            } else {
                0.0
            };
            lead + dot(&r, &psi.values[i])
        })
        .collect();
    InfluenceIngredients {
        tau_hat,
        r,
        psi,
        influence,
    }
}

/// Influence values of a sample mean over the subjects selected by `pred`:
/// `(n/n_s) s_i (y_i − μ̂)`.
pub fn mean_influence(d: &StudyDataset, pred: impl Fn(u8, u8) -> bool, mu: f64) -> Vec<f64> {
    let ns = (0..d.n()).filter(|&i| pred(d.z(i), d.a(i))).count() as f64;
    let scale = d.n() as f64 / ns;
    (0..d.n())
        .map(|i| {
            if pred(d.z(i), d.a(i)) {
                scale * (d.y(i) - mu)
            } else {
                0.0
            }
        })
        .collect()
}

/// `sqrt(Var_n(values) / n)` with the centered, divide-by-`n` variance.
pub fn se_from_influence(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (var / n).sqrt()
}

/// Per-subject influence values of `μ̂₀` and `μ̂₁` for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmInfluence {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub control: Option<InfluenceIngredients>,
    pub treated: Option<InfluenceIngredients>,
}

pub fn arm_influence(d: &StudyDataset, est: &PointEstimates) -> Result<ArmInfluence> {
    let treated_pred = |z: u8, a: u8| z == 1 && a == 1;
    match est.method {
        MethodKind::UaRct => Ok(ArmInfluence {
            mu0: mean_influence(d, |z, a| z == 1 && a == 0, est.mu0),
            mu1: mean_influence(d, treated_pred, est.mu1),
            control: None,
            treated: None,
        }),
        MethodKind::UaPooled => Ok(ArmInfluence {
            mu0: mean_influence(d, |_, a| a == 0, est.mu0),
            mu1: mean_influence(d, treated_pred, est.mu1),
            control: None,
            treated: None,
        }),
        MethodKind::GcRct | MethodKind::GcNi | MethodKind::GcVs => {
            let fits = est
                .fits
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} estimate lacks its fits", est.method)))?;
            let link = fits.alpha.link;
            let phi = influence_psi(d, &fits.alpha)?;
            let treated = gc_ingredients(d, &fits.alpha.coef, est.mu1, link, phi);
            let psi = match &fits.control {
                ControlFit::Rct(f) | ControlFit::Ni(f) => influence_psi(d, f)?,
                ControlFit::Vs(pen) => {
                    let oracle = psi_fit(d, &PsiVariant::VsOracle(pen.active_set.clone()), link)?;
                    influence_psi(d, &oracle)?
                }
            };
            let control = gc_ingredients(d, fits.control.beta(), est.mu0, link, psi);
            Ok(ArmInfluence {
                mu0: control.influence.clone(),
                mu1: treated.influence.clone(),
                control: Some(control),
                treated: Some(treated),
            })
        }
    }
}

/// `ġ(μ̂₁)·IF₁ − ġ(μ̂₀)·IF₀`.
pub fn delta_influence(est: &PointEstimates, arms: &ArmInfluence) -> Result<Vec<f64>> {
    let g1 = est.effect.g_dot(est.mu1)?;
    let g0 = est.effect.g_dot(est.mu0)?;
    Ok(arms
        .mu1
        .iter()
        .zip(&arms.mu0)
        .map(|(a, b)| g1 * a - g0 * b)
        .collect())
}

pub fn var_mu0(arms: &ArmInfluence) -> f64 {
    se_from_influence(&arms.mu0)
}

pub fn var_mu1(arms: &ArmInfluence) -> f64 {
    se_from_influence(&arms.mu1)
}

pub fn var_delta(est: &PointEstimates, arms: &ArmInfluence) -> Result<f64> {
    Ok(se_from_influence(&delta_influence(est, arms)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    Analytic,
    Bootstrap,
}

impl SeMethod {
    pub fn name(self) -> &'static str {
        match self {
            SeMethod::Analytic => "analytic",
            SeMethod::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub se_mu0: f64,
    pub se_mu1: f64,
    pub se_delta: f64,
    pub ci_mu0: (f64, f64),
    pub ci_mu1: (f64, f64),
    pub ci_delta: (f64, f64),
    pub alpha: f64,
    pub se_method: SeMethod,
    pub boot_reps: Option<usize>,
    pub boot_failures: usize,
}

impl InferenceReport {
    fn from_se(
        est: &PointEstimates,
        se: (f64, f64, f64),
        alpha: f64,
        se_method: SeMethod,
        boot: Option<(usize, usize)>,
    ) -> Result<Self> {
        Ok(Self {
            se_mu0: se.0,
            se_mu1: se.1,
            se_delta: se.2,
            ci_mu0: wald_ci(est.mu0, se.0, alpha)?,
            ci_mu1: wald_ci(est.mu1, se.1, alpha)?,
            ci_delta: wald_ci(est.delta, se.2, alpha)?,
            alpha,
            se_method,
            boot_reps: boot.map(|b| b.0),
            boot_failures: boot.map_or(0, |b| b.1),
        })
    }
}

/// Plug-in influence-function standard errors and Wald intervals.
pub fn analytic(d: &StudyDataset, est: &PointEstimates, alpha: f64) -> Result<InferenceReport> {
    let arms = arm_influence(d, est)?;
    let se = (var_mu0(&arms), var_mu1(&arms), var_delta(est, &arms)?);
    InferenceReport::from_se(est, se, alpha, SeMethod::Analytic, None)
}

/// `est ± z_{1−α/2}·se`.
pub fn wald_ci(est: f64, se: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(se >= 0.0) {
        return Err(Error::Config(format!("standard error must be >= 0, got {se}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    Ok((est - z * se, est + z * se))
}

/// Draws a stratified resample of `d`: rows drawn with replacement within
/// (z=1, a=1), (z=1, a=0) and (z=0), each at its original size.
pub fn stratified_resample<R: Rng + ?Sized>(d: &StudyDataset, rng: &mut R) -> Result<StudyDataset> {
    let strata = [
        d.indices_where(|r| r.z == 1 && r.a == 1),
        d.indices_where(|r| r.z == 1 && r.a == 0),
        d.indices_where(|r| r.z == 0),
    ];
    let mut idx = Vec::with_capacity(d.n());
    for s in &strata {
        for _ in 0..s.len() {
            idx.push(s[rng.random_range(0..s.len())]);
        }
    }
    Ok(d.subset(&idx)?)
}

/// `(μ̂₀, μ̂₁, δ̂)` of one method, running the adaptive-lasso selection when
/// the method needs it.
pub fn point_estimate<R: Rng + ?Sized>(
    d: &StudyDataset,
    method: MethodKind,
    effect: EffectMeasure,
    cv: &CvOptions,
    rng: &mut R,
) -> Result<PointEstimates> {
    let link = Link::for_outcome(d.outcome_kind());
    let pen = if method == MethodKind::GcVs {
        Some(select_and_fit(d, link, cv, rng)?)
    } else {
        None
    };
    estimate(d, method, effect, link, pen.as_ref())
}

/// Replicate estimates `(μ̂₀, μ̂₁, δ̂)`; replicate `b` uses stream `(seed, b)`.
pub fn bootstrap_replicates(
    d: &StudyDataset,
    method: MethodKind,
    effect: EffectMeasure,
    reps: usize,
    seed: u64,
    cv: &CvOptions,
) -> Vec<Result<[f64; 3]>> {
    (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let boot = stratified_resample(d, &mut rng)?;
            let e = point_estimate(&boot, method, effect, cv, &mut rng)?;
            Ok([e.mu0, e.mu1, e.delta])
        })
        .collect()
}

/// Bootstrap standard errors (SD of replicate estimates) with Wald
/// intervals around `est`.
pub fn bootstrap(
    d: &StudyDataset,
    est: &PointEstimates,
    reps: usize,
    alpha: f64,
    seed: u64,
    cv: &CvOptions,
) -> Result<InferenceReport> {
    if reps < 2 {
        return Err(Error::Config(format!("need at least 2 bootstrap replicates, got {reps}")));
    }
    let results = bootstrap_replicates(d, est.method, est.effect, reps, seed, cv);
    let mut ok = Vec::with_capacity(reps);
    let mut failed = 0;
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("bootstrap replicate {b} failed: {e}");
                failed += 1;
            }
        }
    }
    let limit = (BOOT_FAILURE_LIMIT * reps as f64).floor() as usize;
    if failed > limit || ok.len() < 2 {
        return Err(Error::TooManyFailures {
            failed,
            total: reps,
            limit,
        });
    }
    let sd = |k: usize| {
        let m = ok.iter().map(|v| v[k]).sum::<f64>() / ok.len() as f64;
        (ok.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
    };
    InferenceReport::from_se(
        est,
        (sd(0), sd(1), sd(2)),
        alpha,
        SeMethod::Bootstrap,
        Some((reps, failed)),
    )
}
