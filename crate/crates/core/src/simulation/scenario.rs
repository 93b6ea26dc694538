//! The four data-generating scenarios.
//!
//! Covariates are trivariate normal with identity covariance, centered at
//! `ν₁ = 0` inside the trial and `ν₀ = (−0.2, 0.4, 1)` in the external source.
//! The outcome model is
//!
//! ```text
//! η = (1, x')β + (1 − z)(1, x')γ [+ 0.5 x₁x₂ + 0.25 (x₃² − 1)]
//! ```
//!
//! with the bracketed term present in B and D. A and B add `N(0, 0.2²)` noise;
//! C and D draw `y = 1{U < expit(η)}`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{OutcomeKind, StudyDataset};
use crate::error::{Error, Result};
use crate::glm::expit;

pub const P: usize = 3;
pub const NU1: [f64; P] = [0.0, 0.0, 0.0];
pub const NU0: [f64; P] = [-0.2, 0.4, 1.0];
pub const BETA: [f64; P + 1] = [0.5, -0.5, 0.5, -0.5];
pub const GAMMA_SIZE: f64 = 0.75;
pub const NOISE_SD: f64 = 0.2;
pub const NONLINEAR: [f64; 2] = [0.5, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    D,
}

impl Scenario {
    pub fn letter(self) -> char {
        match self {
            Scenario::A => 'A',
            Scenario::B => 'B',
            Scenario::C => 'C',
            Scenario::D => 'D',
        }
    }

    pub fn outcome_kind(self) -> OutcomeKind {
        match self {
            Scenario::A | Scenario::B => OutcomeKind::Continuous,
            Scenario::C | Scenario::D => OutcomeKind::Binary,
        }
    }

    pub fn is_nonlinear(self) -> bool {
        matches!(self, Scenario::B | Scenario::D)
    }

    pub fn needs_calibration(self) -> bool {
        self.is_nonlinear()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            "D" => Ok(Scenario::D),
            _ => Err(Error::Config(format!("unknown scenario '{s}' (expected A, B, C or D)"))),
        }
    }
}

/// `(0·1_{4−m}, 0.75·1_m)`.
pub fn gamma_target(m: usize) -> Vec<f64> {
    (0..=P)
        .map(|j| if j + m > P { GAMMA_SIZE } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub m: usize,
    pub n1: usize,
    pub n0: usize,
    /// Randomization probability inside the trial.
    pub pi: f64,
    pub nu1: [f64; P],
    pub nu0: [f64; P],
    pub beta: Vec<f64>,
    pub gamma_target: Vec<f64>,
    pub noise_sd: f64,
    /// Coefficients of `x₁x₂` and `x₃² − 1`; zero in A and C.
    pub nonlinear: [f64; 2],
    /// Calibrated interaction vector used to generate B and D.
    pub gamma: Option<Vec<f64>>,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, m: usize, n1: usize, n0: usize) -> Result<Self> {
        if m > P + 1 {
            return Err(Error::Config(format!("m must be between 0 and 4, got {m}")));
        }
        if n1 == 0 {
            return Err(Error::Config("n1 must be positive".into()));
        }
        Ok(Self {
            scenario,
            m,
            n1,
            n0,
            pi: 0.5,
            nu1: NU1,
            nu0: NU0,
            beta: BETA.to_vec(),
            gamma_target: gamma_target(m),
            noise_sd: NOISE_SD,
            nonlinear: if scenario.is_nonlinear() {
                NONLINEAR
            } else {
                [0.0, 0.0]
            },
            gamma: None,
        })
    }

    pub fn with_gamma(mut self, gamma: Vec<f64>) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_sizes(mut self, n1: usize, n0: usize) -> Self {
        self.n1 = n1;
        self.n0 = n0;
        self
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.scenario.outcome_kind()
    }

    /// The interaction vector used to generate external outcomes.
    pub fn generating_gamma(&self) -> Result<&[f64]> {
        match (&self.gamma, self.scenario.needs_calibration()) {
            (Some(g), _) => Ok(g),
            (None, false) => Ok(&self.gamma_target),
            (None, true) => Err(Error::CalibrationMissing(self.scenario.letter())),
        }
    }

    /// `η(z, x)` for interaction vector `gamma`.
    pub fn eta(&self, z: u8, x: &[f64], gamma: &[f64]) -> f64 {
        let lin = |c: &[f64]| c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[2];
        let mut eta = lin(&self.beta);
        if z == 0 {
            eta += lin(gamma);
        }
        eta + self.nonlinear[0] * x[0] * x[1] + self.nonlinear[1] * (x[2] * x[2] - 1.0)
    }

    /// Draws one outcome given `η`: normal noise or a Bernoulli threshold.
    pub fn draw_outcome<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        match self.outcome_kind() {
            OutcomeKind::Continuous => eta + self.noise_sd * rng.sample::<f64, _>(StandardNormal),
            OutcomeKind::Binary => {
                let u: f64 = rng.random();
                if u < expit(eta) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn draw_covariates<R: Rng + ?Sized>(nu: &[f64; P], rng: &mut R, out: &mut [f64]) {
    for (o, m) in out.iter_mut().zip(nu) {
        *o = m + rng.sample::<f64, _>(StandardNormal);
    }
}

/// One simulated study: `n1` trial rows followed by `n0` external rows.
/// Each trial row consumes three normals, one uniform for the arm and one
/// outcome draw; each external row consumes three normals and one outcome draw.
pub fn generate<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<StudyDataset> {
    let gamma = spec.generating_gamma()?.to_vec();
    let n = spec.n1 + spec.n0;
    let mut z = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut x = vec![0.0; n * P];
    for i in 0..n {
        let internal = i < spec.n1;
        let xi = &mut x[i * P..(i + 1) * P];
        draw_covariates(if internal { &spec.nu1 } else { &spec.nu0 }, rng, xi);
        let (zi, ai) = if internal {
            let u: f64 = rng.random();
            (1u8, u8::from(u < spec.pi))
        } else {
            (0u8, 0u8)
        };
        let eta = spec.eta(zi, xi, &gamma);
        z.push(zi);
        a.push(ai);
        y.push(spec.draw_outcome(eta, rng));
    }
    Ok(StudyDataset::from_columns(z, a, y, x, P, spec.outcome_kind())?)
}
