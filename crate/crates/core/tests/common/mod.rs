#![allow(dead_code)]

use gcvs_core::glm::{scaled_score, GlmFit};
use gcvs_core::{OutcomeKind, StudyDataset, StudyRow};

pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Recomputes the scaled score of a converged fit and checks it vanishes.
pub fn assert_orthogonal(d: &StudyDataset, fit: &GlmFit) {
    assert!(fit.converged, "{} did not converge", fit.design.label());
    let s = scaled_score(d, fit);
    assert!(
        s <= ORTHOGONALITY_TOL,
        "{}: scaled score {s:e} exceeds {ORTHOGONALITY_TOL:e}",
        fit.design.label()
    );
}

pub fn twenty_rows() -> StudyDataset {
    let mut rows = Vec::new();
    for i in 0..20 {
        let z = u8::from(i < 10);
        let t = i as f64;
        let x = ((t * 0.37).sin() * 1.6 + 0.1 * t).rem_euclid(3.0) - 1.5;
        let noise = (t * 1.7 + 0.3).cos() * 0.3;
        let y = if z == 1 {
            0.4 + 0.8 * x + noise
        } else {
            0.9 + 0.5 * x + noise
        };
        rows.push(StudyRow::new(z, 0, y, vec![x]));
    }
    rows.push(StudyRow::new(1, 1, 0.0, vec![0.0]));
    StudyDataset::new(rows, OutcomeKind::Continuous).unwrap()
}

pub struct GridOracle {
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    pub objective: f64,
}

/// Minimizes `(1/2n) Σ (y − d'θ)² + λ Σ w_j |γ_j|` by exhaustive search over
/// a γ grid with spacing `step`, profiling β exactly at each grid point.
pub fn grid_oracle(d: &StudyDataset, w: [f64; 2], lambda: f64, lo: f64, hi: f64, step: f64) -> GridOracle {
    let rows: Vec<usize> = (0..d.n()).filter(|&i| d.a(i) == 0).collect();
    let n = rows.len() as f64;
    let x: Vec<f64> = rows.iter().map(|&i| d.x(i)[0]).collect();
    let y: Vec<f64> = rows.iter().map(|&i| d.y(i)).collect();
    let ext: Vec<f64> = rows.iter().map(|&i| f64::from(1 - d.z(i))).collect();
    let (sx, sxx) = (x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>());
    let det = n * sxx - sx * sx;
    let k = ((hi - lo) / step).round() as usize;
    let mut best = GridOracle {
        beta: [0.0; 2],
        gamma: [0.0; 2],
        objective: f64::INFINITY,
    };
    let mut r = vec![0.0; y.len()];
    for a in 0..=k {
        let g0 = lo + a as f64 * step;
        for b in 0..=k {
            let g1 = lo + b as f64 * step;
            let (mut sr, mut sxr) = (0.0, 0.0);
            for i in 0..y.len() {
                r[i] = y[i] - ext[i] * (g0 + g1 * x[i]);
                sr += r[i];
                sxr += x[i] * r[i];
            }
            let b1 = (n * sxr - sx * sr) / det;
            let b0 = (sr - b1 * sx) / n;
            let mut loss = 0.0;
            for i in 0..y.len() {
                let e = r[i] - b0 - b1 * x[i];
                loss += e * e;
            }
            let obj = 0.5 * loss / n + lambda * (w[0] * g0.abs() + w[1] * g1.abs());
            if obj < best.objective {
                best = GridOracle {
                    beta: [b0, b1],
                    gamma: [g0, g1],
                    objective: obj,
                };
            }
        }
    }
    best
}
