//! Hybrid-control trial estimation: g-computation with adaptive-lasso
//! selection of source-by-covariate interactions, its comparators,
//! influence-function and bootstrap inference, and a simulation harness.

pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod rng;
pub mod simulation;

pub use data::{load_csv, parse_csv, save_csv, strata_counts, OutcomeKind, StudyDataset, StudyRow};
pub use error::{DataError, Error, Result};
pub use estimators::{estimate, estimate_methods, EffectMeasure, MethodKind, PointEstimates};
pub use glm::{fit_mle, GlmFit, Link};
pub use inference::{analytic, bootstrap, wald_ci, InferenceReport, SeMethod};
pub use lasso::{CvOptions, PenalizedFit};
