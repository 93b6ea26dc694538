//! Point estimators of `(μ₀, μ₁, δ)`.
//!
//! The g-computation estimators average fitted control or treated means over
//! every internal subject, whichever arm they were randomized to.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{OutcomeKind, StudyDataset};
use crate::error::{DataError, Error, Result};
use crate::glm::{
    design_internal_control, design_internal_treated, design_pooled_control_ni, fit_mle, GlmFit,
    Link,
};
use crate::lasso::{select_and_fit, CvOptions, PenalizedFit};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    UaRct,
    UaPooled,
    GcRct,
    GcNi,
    GcVs,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::UaRct,
        MethodKind::UaPooled,
        MethodKind::GcRct,
        MethodKind::GcNi,
        MethodKind::GcVs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::UaRct => "UA-RCT",
            MethodKind::UaPooled => "UA-pooled",
            MethodKind::GcRct => "GC-RCT",
            MethodKind::GcNi => "GC-NI",
            MethodKind::GcVs => "GC-VS",
        }
    }

    pub fn is_gc(self) -> bool {
        matches!(self, MethodKind::GcRct | MethodKind::GcNi | MethodKind::GcVs)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Scale on which the treatment effect `δ = g(μ₁) − g(μ₀)` is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMeasure {
    Difference,
    LogRatio,
    LogOddsRatio,
}

impl EffectMeasure {
    pub fn name(self) -> &'static str {
        match self {
            EffectMeasure::Difference => "difference",
            EffectMeasure::LogRatio => "log_ratio",
            EffectMeasure::LogOddsRatio => "log_odds_ratio",
        }
    }

    fn check(self, mu: f64) -> Result<()> {
        let ok = match self {
            EffectMeasure::Difference => mu.is_finite(),
            EffectMeasure::LogRatio => mu > 0.0 && mu.is_finite(),
            EffectMeasure::LogOddsRatio => mu > 0.0 && mu < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{} undefined at mean {mu}", self.name())))
        }
    }

    /// `g(μ)`: identity, log or logit.
    pub fn g(self, mu: f64) -> Result<f64> {
        self.check(mu)?;
        Ok(match self {
            EffectMeasure::Difference => mu,
            EffectMeasure::LogRatio => mu.ln(),
            EffectMeasure::LogOddsRatio => (mu / (1.0 - mu)).ln(),
        })
    }

    /// `ġ(μ)`.
    pub fn g_dot(self, mu: f64) -> Result<f64> {
        self.check(mu)?;
        Ok(match self {
            EffectMeasure::Difference => 1.0,
            EffectMeasure::LogRatio => 1.0 / mu,
            EffectMeasure::LogOddsRatio => 1.0 / (mu * (1.0 - mu)),
        })
    }

    pub fn delta(self, mu0: f64, mu1: f64) -> Result<f64> {
        Ok(self.g(mu1)? - self.g(mu0)?)
    }

    /// Log odds ratios need a binary outcome.
    pub fn check_outcome(self, kind: OutcomeKind) -> Result<()> {
        if self == EffectMeasure::LogOddsRatio && kind != OutcomeKind::Binary {
            return Err(Error::Config(
                "log_odds_ratio requires a binary outcome".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for EffectMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EffectMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "difference" | "diff" => Ok(EffectMeasure::Difference),
            "log_ratio" => Ok(EffectMeasure::LogRatio),
            "log_odds_ratio" => Ok(EffectMeasure::LogOddsRatio),
            _ => Err(Error::Config(format!("unknown effect measure '{s}'"))),
        }
    }
}

/// The control-outcome model behind a GC estimate of `μ₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlFit {
    Rct(GlmFit),
    Ni(GlmFit),
    Vs(Box<PenalizedFit>),
}

impl ControlFit {
    pub fn beta(&self) -> &[f64] {
        match self {
            ControlFit::Rct(f) | ControlFit::Ni(f) => &f.coef,
            ControlFit::Vs(f) => &f.beta_vs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcFits {
    /// Treated-outcome model fit on internal treated subjects.
    pub alpha: GlmFit,
    pub control: ControlFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimates {
    pub method: MethodKind,
    pub effect: EffectMeasure,
    pub mu0: f64,
    pub mu1: f64,
    pub delta: f64,
    /// Present for the GC methods.
    pub fits: Option<GcFits>,
}

fn mean_where(d: &StudyDataset, pred: impl Fn(u8, u8) -> bool, what: &'static str) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..d.n() {
        if pred(d.z(i), d.a(i)) {
            sum += d.y(i);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data(DataError::EmptyStratum(what)));
    }
    Ok(sum / count as f64)
}

fn assemble(
    method: MethodKind,
    effect: EffectMeasure,
    mu0: f64,
    mu1: f64,
    fits: Option<GcFits>,
) -> Result<PointEstimates> {
    Ok(PointEstimates {
        method,
        effect,
        mu0,
        mu1,
        delta: effect.delta(mu0, mu1)?,
        fits,
    })
}

/// Arm means over internal subjects.
pub fn ua_rct(d: &StudyDataset, effect: EffectMeasure) -> Result<PointEstimates> {
    let mu0 = mean_where(d, |z, a| z == 1 && a == 0, "internal control")?;
    let mu1 = mean_where(d, |z, a| z == 1 && a == 1, "internal treated")?;
    assemble(MethodKind::UaRct, effect, mu0, mu1, None)
}

/// Arm means with internal and external controls pooled.
pub fn ua_pooled(d: &StudyDataset, effect: EffectMeasure) -> Result<PointEstimates> {
    let mu0 = mean_where(d, |_, a| a == 0, "control")?;
    let mu1 = mean_where(d, |z, a| z == 1 && a == 1, "internal treated")?;
    assemble(MethodKind::UaPooled, effect, mu0, mu1, None)
}

/// `n₁⁻¹ Σ_{z=1} h((1, x')coef)`.
pub fn gc_average(d: &StudyDataset, coef: &[f64], link: Link) -> f64 {
    let mut sum = 0.0;
    let mut n1 = 0usize;
    for i in 0..d.n() {
        if d.z(i) == 1 {
            sum += link.inverse(coef[0] + dot(&coef[1..], d.x(i)));
            n1 += 1;
        }
    }
    sum / n1 as f64
}

pub fn gc_mu1(d: &StudyDataset, link: Link) -> Result<(f64, GlmFit)> {
    let fit = fit_mle(d, &design_internal_treated(d), link)?;
    Ok((gc_average(d, &fit.coef, link), fit))
}

pub fn gc_mu0_rct(d: &StudyDataset, link: Link) -> Result<(f64, ControlFit)> {
    let fit = fit_mle(d, &design_internal_control(d), link)?;
    Ok((gc_average(d, &fit.coef, link), ControlFit::Rct(fit)))
}

pub fn gc_mu0_ni(d: &StudyDataset, link: Link) -> Result<(f64, ControlFit)> {
    let fit = fit_mle(d, &design_pooled_control_ni(d), link)?;
    Ok((gc_average(d, &fit.coef, link), ControlFit::Ni(fit)))
}

pub fn gc_mu0_vs(d: &StudyDataset, link: Link, pen: &PenalizedFit) -> Result<(f64, ControlFit)> {
    if pen.link != link {
        return Err(Error::Config("penalized fit uses a different link".into()));
    }
    if pen.beta_vs.len() != d.p() + 1 {
        return Err(Error::Config(format!(
            "penalized fit has {} main coefficients, dataset needs {}",
            pen.beta_vs.len(),
            d.p() + 1
        )));
    }
    Ok((
        gc_average(d, &pen.beta_vs, link),
        ControlFit::Vs(Box::new(pen.clone())),
    ))
}

fn check_link(d: &StudyDataset, link: Link) -> Result<()> {
    let want = Link::for_outcome(d.outcome_kind());
    if link != want {
        return Err(Error::Config(format!(
            "{:?} link does not match a {:?} outcome",
            link,
            d.outcome_kind()
        )));
    }
    Ok(())
}

/// One method's `(μ̂₀, μ̂₁, δ̂)`. GC-VS needs the penalized fit in `pen`.
pub fn estimate(
    d: &StudyDataset,
    method: MethodKind,
    effect: EffectMeasure,
    link: Link,
    pen: Option<&PenalizedFit>,
) -> Result<PointEstimates> {
    effect.check_outcome(d.outcome_kind())?;
    match method {
        MethodKind::UaRct => return ua_rct(d, effect),
        MethodKind::UaPooled => return ua_pooled(d, effect),
        _ => {}
    }
    check_link(d, link)?;
    let (mu1, alpha) = gc_mu1(d, link)?;
    let (mu0, control) = match method {
        MethodKind::GcRct => gc_mu0_rct(d, link)?,
        MethodKind::GcNi => gc_mu0_ni(d, link)?,
        MethodKind::GcVs => {
            let pen = pen.ok_or_else(|| {
                Error::Config("GC-VS requires a penalized fit".into())
            })?;
            gc_mu0_vs(d, link, pen)?
        }
        MethodKind::UaRct | MethodKind::UaPooled => unreachable!(),
    };
    assemble(method, effect, mu0, mu1, Some(GcFits { alpha, control }))
}

/// Runs every requested method on `d`, fitting the adaptive lasso once if
/// GC-VS is among them. Results follow the order of `methods`.
pub fn estimate_methods<R: Rng + ?Sized>(
    d: &StudyDataset,
    methods: &[MethodKind],
    effect: EffectMeasure,
    cv: &CvOptions,
    rng: &mut R,
) -> Result<Vec<PointEstimates>> {
    let link = Link::for_outcome(d.outcome_kind());
    let pen = if methods.contains(&MethodKind::GcVs) {
        Some(select_and_fit(d, link, cv, rng)?)
    } else {
        None
    };
    methods
        .iter()
        .map(|&m| estimate(d, m, effect, link, pen.as_ref()))
        .collect()
}
