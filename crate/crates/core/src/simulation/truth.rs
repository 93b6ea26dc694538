//! True values of the estimands for a scenario.
//!
//! Outcomes never depend on the arm, so `μ₁ = μ₀` and `δ = 0` on every
//! scale. For the continuous scenarios `μ₀` is the mean of a linear
//! predictor plus mean-zero terms; for the binary ones it is a Monte Carlo
//! average of `expit(η)` over trial covariates, cached on disk.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{draw_covariates, Scenario, ScenarioSpec, P};
use crate::data::OutcomeKind;
use crate::error::{Error, Result};
use crate::estimators::EffectMeasure;
use crate::glm::expit;
use crate::rng::stream;

pub const TRUTH_DRAWS: u64 = 100_000_000;
pub const TRUTH_SEED: u64 = 20_240_611;
const CHUNK: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthOptions {
    pub draws: u64,
    pub seed: u64,
    /// Directory for cached Monte Carlo values; `None` disables the cache.
    pub cache_dir: Option<PathBuf>,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self {
            draws: TRUTH_DRAWS,
            seed: TRUTH_SEED,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub mu0: f64,
    pub mu1: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthRecord {
    scenario: Scenario,
    draws: u64,
    seed: u64,
    nonlinear: [f64; 2],
    mu0: f64,
}

/// `E[expit(η(1, x))]` over `x ~ N₃(ν₁, I)` from `draws` draws split into
/// fixed chunks, chunk `c` using stream `(seed, c)`.
pub fn mc_mu0(spec: &ScenarioSpec, draws: u64, seed: u64) -> f64 {
    let chunks = draws.div_ceil(CHUNK);
    let zero = [0.0; P + 1];
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut x = [0.0; P];
            let mut s = 0.0;
            for _ in 0..len {
                draw_covariates(&spec.nu1, &mut rng, &mut x);
                s += expit(spec.eta(1, &x, &zero));
            }
            s
        })
        .collect();
    sums.iter().sum::<f64>() / draws as f64
}

fn cache_path(dir: &Path, spec: &ScenarioSpec, opts: &TruthOptions) -> PathBuf {
    dir.join(format!(
        "truth_{}_{}_{}.json",
        spec.scenario.letter(),
        opts.seed,
        opts.draws
    ))
}

/// True `μ₀` for `spec`.
pub fn true_mu0(spec: &ScenarioSpec, opts: &TruthOptions) -> Result<f64> {
    if spec.outcome_kind() == OutcomeKind::Continuous {
        let nu = &spec.nu1;
        let b = &spec.beta;
        let lin = b[0] + b[1] * nu[0] + b[2] * nu[1] + b[3] * nu[2];
        let nonlinear = spec.nonlinear[0] * nu[0] * nu[1] + spec.nonlinear[1] * nu[2] * nu[2];
        return Ok(lin + nonlinear);
    }
    if opts.draws == 0 {
        return Err(Error::Config("truth needs at least one draw".into()));
    }
    let path = opts.cache_dir.as_ref().map(|d| cache_path(d, spec, opts));
    if let Some(path) = &path {
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(rec) = serde_json::from_str::<TruthRecord>(&text) {
                if rec.scenario == spec.scenario
                    && rec.draws == opts.draws
                    && rec.seed == opts.seed
                    && rec.nonlinear == spec.nonlinear
                {
                    return Ok(rec.mu0);
                }
            }
        }
    }
    let mu0 = mc_mu0(spec, opts.draws, opts.seed);
    if let Some(path) = &path {
        let rec = TruthRecord {
            scenario: spec.scenario,
            draws: opts.draws,
            seed: opts.seed,
            nonlinear: spec.nonlinear,
            mu0,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(&rec).expect("truth record serializes"))?;
    }
    Ok(mu0)
}

/// `(μ₀, μ₁, δ)` with `μ₁ = μ₀` and `δ = 0`.
pub fn truth(spec: &ScenarioSpec, effect: EffectMeasure, opts: &TruthOptions) -> Result<Truth> {
    let mu0 = true_mu0(spec, opts)?;
    Ok(Truth {
        mu0,
        mu1: mu0,
        delta: effect.delta(mu0, mu0)?,
    })
}
