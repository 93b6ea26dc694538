//! Monte Carlo replication harness.
//!
//! Replicate `r` draws everything from stream `(master_seed, r)`: the study
//! data first, then the cross-validation folds. Results are reduced in
//! replicate order, so the summary does not depend on the thread count.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{generate, Scenario, ScenarioSpec};
use super::truth::Truth;
use crate::error::{Error, Result};
use crate::estimators::{estimate_methods, ControlFit, EffectMeasure, MethodKind};
use crate::inference::analytic;
use crate::lasso::CvOptions;
use crate::rng::stream;

/// Largest share of failed replicates before a study is abandoned.
pub const MC_FAILURE_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Mu0,
    Mu1,
    Delta,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Mu0, Estimand::Mu1, Estimand::Delta];

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Mu0 => "mu0",
            Estimand::Mu1 => "mu1",
            Estimand::Delta => "delta",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub methods: Vec<MethodKind>,
    pub effect: EffectMeasure,
    pub reps: usize,
    pub master_seed: u64,
    /// Level of the Wald intervals scored for coverage.
    pub alpha: f64,
    pub cv: CvOptions,
}

impl McOptions {
    pub fn new(reps: usize, master_seed: u64) -> Self {
        Self {
            methods: MethodKind::ALL.to_vec(),
            effect: EffectMeasure::Difference,
            reps,
            master_seed,
            alpha: 0.05,
            cv: CvOptions::default(),
        }
    }
}

/// Estimates, standard errors and interval bounds of one method in one
/// replicate, indexed by [`Estimand`].
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: MethodKind,
    pub est: [f64; 3],
    pub se: [f64; 3],
    pub ci: [(f64, f64); 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub methods: Vec<MethodOutcome>,
    /// Size of the GC-VS active set, when GC-VS ran.
    pub active_size: Option<usize>,
}

/// Generates and analyzes replicate `rep`.
pub fn run_replicate(spec: &ScenarioSpec, opts: &McOptions, rep: usize) -> Result<ReplicateOutcome> {
    let mut rng = stream(opts.master_seed, rep as u64);
    let d = generate(spec, &mut rng)?;
    let ests = estimate_methods(&d, &opts.methods, opts.effect, &opts.cv, &mut rng)?;
    let mut active_size = None;
    let mut methods = Vec::with_capacity(ests.len());
    for est in &ests {
        if let Some(fits) = &est.fits {
            if let ControlFit::Vs(pen) = &fits.control {
                active_size = Some(pen.active_set.len());
            }
        }
        let inf = analytic(&d, est, opts.alpha)?;
        methods.push(MethodOutcome {
            method: est.method,
            est: [est.mu0, est.mu1, est.delta],
            se: [inf.se_mu0, inf.se_mu1, inf.se_delta],
            ci: [inf.ci_mu0, inf.ci_mu1, inf.ci_delta],
        });
    }
    Ok(ReplicateOutcome {
        methods,
        active_size,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: MethodKind,
    pub estimand: Estimand,
    pub bias: f64,
    /// `None` with fewer than two replicates.
    pub sd: Option<f64>,
    pub cp: f64,
    pub mean_se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub scenario: Scenario,
    pub m: usize,
    pub n1: usize,
    pub n0: usize,
    pub reps_requested: usize,
    pub reps: usize,
    pub failures: Vec<(usize, String)>,
    pub truth: Truth,
    pub rows: Vec<SummaryRow>,
    /// `active_set_sizes[k]` counts replicates whose GC-VS active set had `k`
    /// members.
    pub active_set_sizes: Vec<usize>,
}

pub const CSV_HEADER: [&str; 10] = [
    "scenario", "m", "n1", "n0", "method", "estimand", "bias", "sd", "cp", "reps",
];

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

impl McSummary {
    pub fn row(&self, method: MethodKind, estimand: Estimand) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.estimand == estimand)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                self.scenario.letter().to_string(),
                self.m.to_string(),
                self.n1.to_string(),
                self.n0.to_string(),
                r.method.name().to_string(),
                r.estimand.name().to_string(),
                fmt4(r.bias),
                r.sd.map_or_else(|| "NA".to_string(), fmt4),
                fmt4(r.cp),
                r.reps.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn summarize(values: &[[f64; 3]], k: usize, truth: f64) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v[k]).sum::<f64>() / n;
    let sd = (values.len() >= 2).then(|| {
        (values.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean - truth, sd)
}

/// Runs `opts.reps` replicates of `spec` and scores them against `truth`.
/// A replicate in which any method fails is dropped; the study fails when
/// more than 1% of replicates are dropped.
pub fn run_mc(spec: &ScenarioSpec, opts: &McOptions, truth: &Truth) -> Result<McSummary> {
    if opts.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if opts.methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    spec.generating_gamma()?;
    opts.effect.check_outcome(spec.outcome_kind())?;

    let outcomes: Vec<Result<ReplicateOutcome>> = (0..opts.reps)
        .into_par_iter()
        .map(|r| run_replicate(spec, opts, r))
        .collect();

    let mut ok = Vec::with_capacity(opts.reps);
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("replicate {r} dropped: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    let limit = (MC_FAILURE_LIMIT * opts.reps as f64).floor() as usize;
    if failures.len() > limit || ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: opts.reps,
            limit,
        });
    }

    let truths = [truth.mu0, truth.mu1, truth.delta];
    let mut rows = Vec::new();
    for (mi, &method) in opts.methods.iter().enumerate() {
        let est: Vec<[f64; 3]> = ok.iter().map(|o| o.methods[mi].est).collect();
        for estimand in Estimand::ALL {
            let k = estimand.index();
            let (bias, sd) = summarize(&est, k, truths[k]);
            let covered = ok
                .iter()
                .filter(|o| {
                    let (lo, hi) = o.methods[mi].ci[k];
                    lo <= truths[k] && truths[k] <= hi
                })
                .count();
            let mean_se = ok.iter().map(|o| o.methods[mi].se[k]).sum::<f64>() / ok.len() as f64;
            rows.push(SummaryRow {
                method,
                estimand,
                bias,
                sd,
                cp: covered as f64 / ok.len() as f64,
                mean_se,
                reps: ok.len(),
            });
        }
    }
    let mut active_set_sizes = vec![0; spec.beta.len() + 1];
    for o in &ok {
        if let Some(k) = o.active_size {
            active_set_sizes[k] += 1;
        }
    }
    Ok(McSummary {
        scenario: spec.scenario,
        m: spec.m,
        n1: spec.n1,
        n0: spec.n0,
        reps_requested: opts.reps,
        reps: ok.len(),
        failures,
        truth: *truth,
        rows,
        active_set_sizes,
    })
}
