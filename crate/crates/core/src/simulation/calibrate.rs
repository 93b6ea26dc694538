//! Interaction vectors for the nonlinear scenarios.
//!
//! In B and D the interaction vector used to generate external outcomes is
//! chosen so that the limit of `β̂_EC − β̂` is the target `γ_A`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{draw_covariates, gamma_target, Scenario, ScenarioSpec, P};
use crate::data::{OutcomeKind, StudyDataset};
use crate::error::{Error, Result};
use crate::glm::{design_external_control, design_internal_control, fit_mle, GlmFit, Link};
use crate::rng::stream;

/// Largest allowed gap between the closed-form and simulated corrections.
pub const MOMENT_CHECK_TOL: f64 = 1e-3;
pub const GAMMA_B_MC_DRAWS: usize = 10_000_000;
pub const GAMMA_D_TOL: f64 = 0.005;
pub const GAMMA_D_MAX_ITER: usize = 20;
const CHUNK: usize = 1 << 20;

/// `E[(1,x)'(1,x)]⁻¹ E[f(x)(1,x)']` under `x ~ N₃(ν, I)` with
/// `f = c₁x₁x₂ + c₂(x₃² − 1)`, from Gaussian moment identities.
pub fn gamma_b_correction(nu: &[f64; P], nonlinear: [f64; 2]) -> Result<Vec<f64>> {
    let [n1, n2, n3] = *nu;
    let mut m = Matrix4::identity();
    for j in 0..P {
        m[(0, j + 1)] = nu[j];
        m[(j + 1, 0)] = nu[j];
        for k in 0..P {
            m[(j + 1, k + 1)] = f64::from(u8::from(j == k)) + nu[j] * nu[k];
        }
    }
    let cross = Vector4::new(n1 * n2, (1.0 + n1 * n1) * n2, n1 * (1.0 + n2 * n2), n1 * n2 * n3);
    let square = Vector4::new(n3 * n3, n1 * n3 * n3, n2 * n3 * n3, n3.powi(3) + 2.0 * n3);
    let b = cross * nonlinear[0] + square * nonlinear[1];
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular("covariate moment matrix".into()))?;
    Ok(chol.solve(&b).iter().copied().collect())
}

/// Simulated version of [`gamma_b_correction`]: least-squares projection of
/// `f(x)` on `(1, x)` over `draws` covariate vectors.
pub fn gamma_b_correction_mc(
    nu: &[f64; P],
    nonlinear: [f64; 2],
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<([f64; 16], [f64; 4])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut mm = [0.0; 16];
            let mut bb = [0.0; 4];
            let mut x = [0.0; P];
            for _ in 0..len {
                draw_covariates(nu, &mut rng, &mut x);
                let d = [1.0, x[0], x[1], x[2]];
                let f = nonlinear[0] * x[0] * x[1] + nonlinear[1] * (x[2] * x[2] - 1.0);
                for j in 0..4 {
                    bb[j] += f * d[j];
                    for k in 0..4 {
                        mm[j * 4 + k] += d[j] * d[k];
                    }
                }
            }
            (mm, bb)
        })
        .collect();
    let mut mm = [0.0; 16];
    let mut bb = [0.0; 4];
    for (pm, pb) in &parts {
        mm.iter_mut().zip(pm).for_each(|(a, b)| *a += b);
        bb.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
    }
    let m = DMatrix::from_row_slice(4, 4, &mm);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular("simulated covariate moments".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(&bb)).iter().copied().collect())
}

/// `γ_B = γ_A − correction`, closed form.
pub fn calibrate_gamma_b(m: usize) -> Result<Vec<f64>> {
    let spec = ScenarioSpec::new(Scenario::B, m, 1, 0)?;
    let corr = gamma_b_correction(&spec.nu0, spec.nonlinear)?;
    Ok(spec
        .gamma_target
        .iter()
        .zip(&corr)
        .map(|(g, c)| g - c)
        .collect())
}

/// How a calibrated interaction vector was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub scenario: Scenario,
    pub m: usize,
    pub gamma: Vec<f64>,
    pub gamma_target: Vec<f64>,
    /// `β̂_EC − β̂` on the calibration (or verification) sample.
    pub gamma_star: Vec<f64>,
    pub seed: u64,
    /// Rows per source in the calibration sample.
    pub n_cal: usize,
    pub iterations: usize,
    /// Closed-form and simulated corrections (B only).
    pub correction_closed: Option<Vec<f64>>,
    pub correction_mc: Option<Vec<f64>>,
    pub mc_draws: Option<usize>,
}

impl CalibrationRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad calibration file: {e}")))
    }
}

/// Closed-form `γ_B` cross-checked against the simulated correction with
/// `draws` draws, then verified by refitting on `n_cal` rows per source.
pub fn calibrate_gamma_b_checked(
    m: usize,
    seed: u64,
    draws: usize,
    n_cal: usize,
) -> Result<CalibrationRecord> {
    let spec = ScenarioSpec::new(Scenario::B, m, 1, 0)?;
    let closed = gamma_b_correction(&spec.nu0, spec.nonlinear)?;
    let mc = gamma_b_correction_mc(&spec.nu0, spec.nonlinear, draws, seed)?;
    let gap = closed
        .iter()
        .zip(&mc)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > MOMENT_CHECK_TOL {
        return Err(Error::Calibration(format!(
            "closed-form and simulated moments differ by {gap:.2e}"
        )));
    }
    let gamma = calibrate_gamma_b(m)?;
    let spec = spec.with_gamma(gamma.clone());
    let sample = ControlSample::draw(&spec, n_cal, seed.wrapping_add(1))?;
    let internal = sample.fit_internal(&spec)?;
    let gamma_star = sample.gamma_star(&spec, &gamma, &internal)?;
    Ok(CalibrationRecord {
        scenario: Scenario::B,
        m,
        gamma_target: spec.gamma_target.clone(),
        gamma,
        gamma_star,
        seed,
        n_cal,
        iterations: 0,
        correction_closed: Some(closed),
        correction_mc: Some(mc),
        mc_draws: Some(draws),
    })
}

/// Internal and external control covariates plus the uniforms or noise
/// draws behind their outcomes, held fixed across calibration iterations.
struct ControlSample {
    n: usize,
    x: Vec<f64>,
    noise: Vec<f64>,
}

impl ControlSample {
    fn draw(spec: &ScenarioSpec, n_cal: usize, seed: u64) -> Result<Self> {
        if n_cal == 0 {
            return Err(Error::Config("calibration sample size must be positive".into()));
        }
        let total = 2 * n_cal;
        let chunks = total.div_ceil(CHUNK);
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream(seed, c as u64);
                let start = c * CHUNK;
                let len = CHUNK.min(total - start);
                let mut x = vec![0.0; len * P];
                let mut noise = Vec::with_capacity(len);
                for r in 0..len {
                    let nu = if start + r < n_cal { &spec.nu1 } else { &spec.nu0 };
                    draw_covariates(nu, &mut rng, &mut x[r * P..(r + 1) * P]);
                    noise.push(match spec.outcome_kind() {
                        OutcomeKind::Continuous => {
                            rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
                        }
                        OutcomeKind::Binary => rand::Rng::random::<f64>(&mut rng),
                    });
                }
                (x, noise)
            })
            .collect();
        let mut x = Vec::with_capacity(total * P);
        let mut noise = Vec::with_capacity(total);
        for (px, pn) in parts {
            x.extend(px);
            noise.extend(pn);
        }
        Ok(Self { n: n_cal, x, noise })
    }

    fn dataset(&self, spec: &ScenarioSpec, gamma: &[f64]) -> Result<StudyDataset> {
        let total = 2 * self.n;
        let z: Vec<u8> = (0..total).map(|i| u8::from(i < self.n)).collect();
        let y = (0..total)
            .map(|i| {
                let eta = spec.eta(z[i], &self.x[i * P..(i + 1) * P], gamma);
                match spec.outcome_kind() {
                    OutcomeKind::Continuous => eta + spec.noise_sd * self.noise[i],
                    OutcomeKind::Binary => f64::from(u8::from(self.noise[i] < crate::glm::expit(eta))),
                }
            })
            .collect();
        Ok(StudyDataset::from_columns(
            z,
            vec![0; total],
            y,
            self.x.clone(),
            P,
            spec.outcome_kind(),
        )?)
    }

    /// Internal outcomes do not involve γ, so one fit serves every iteration.
    fn fit_internal(&self, spec: &ScenarioSpec) -> Result<GlmFit> {
        let d = self.dataset(spec, &spec.gamma_target)?;
        fit_mle(&d, &design_internal_control(&d), Link::for_outcome(spec.outcome_kind()))
    }

    fn gamma_star(&self, spec: &ScenarioSpec, gamma: &[f64], internal: &GlmFit) -> Result<Vec<f64>> {
        let d = self.dataset(spec, gamma)?;
        let link = Link::for_outcome(spec.outcome_kind());
        let external = fit_mle(&d, &design_external_control(&d), link)?;
        Ok(external
            .coef
            .iter()
            .zip(&internal.coef)
            .map(|(e, i)| e - i)
            .collect())
    }
}

/// `β̂_EC − β̂` on `n` rows per source generated from `spec`.
pub fn recovered_gamma(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    let gamma = spec.generating_gamma()?.to_vec();
    let sample = ControlSample::draw(spec, n, seed)?;
    let internal = sample.fit_internal(spec)?;
    sample.gamma_star(spec, &gamma, &internal)
}

/// Fixed-point search for the interaction vector whose large-sample
/// `β̂_EC − β̂` hits the target: `γ ← γ + (γ_A − γ̂*)` on one fixed
/// calibration sample of `n_cal` rows per source.
pub fn calibrate_gamma_d_spec(
    spec: &ScenarioSpec,
    n_cal: usize,
    seed: u64,
    tol: f64,
) -> Result<CalibrationRecord> {
    let target = gamma_target(spec.m);
    let sample = ControlSample::draw(spec, n_cal, seed)?;
    let internal = sample.fit_internal(spec)?;
    let mut gamma = target.clone();
    for iter in 1..=GAMMA_D_MAX_ITER {
        let star = sample.gamma_star(spec, &gamma, &internal)?;
        let gap = star
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        log::debug!("calibration iteration {iter}: max |γ* − γ_A| = {gap:.2e}");
        if gap < tol {
            return Ok(CalibrationRecord {
                scenario: spec.scenario,
                m: spec.m,
                gamma,
                gamma_target: target,
                gamma_star: star,
                seed,
                n_cal,
                iterations: iter,
                correction_closed: None,
                correction_mc: None,
                mc_draws: None,
            });
        }
        for ((g, t), s) in gamma.iter_mut().zip(&target).zip(&star) {
            *g += t - s;
        }
    }
    Err(Error::Calibration(format!(
        "no convergence within {GAMMA_D_MAX_ITER} iterations"
    )))
}

/// [`calibrate_gamma_d_spec`] for scenario D with target size `m`.
pub fn calibrate_gamma_d(m: usize, n_cal: usize, seed: u64, tol: f64) -> Result<CalibrationRecord> {
    let spec = ScenarioSpec::new(Scenario::D, m, 1, 0)?;
    calibrate_gamma_d_spec(&spec, n_cal, seed, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correction_is_zero_without_nonlinear_terms() {
        let c = gamma_b_correction(&super::super::scenario::NU0, [0.0, 0.0]).unwrap();
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn correction_does_not_depend_on_m() {
        let base = calibrate_gamma_b(0).unwrap();
        for m in 1..=4 {
            let g = calibrate_gamma_b(m).unwrap();
            let t = gamma_target(m);
            for j in 0..4 {
                assert!(((g[j] - t[j]) - base[j]).abs() < 1e-15);
            }
        }
    }
}
