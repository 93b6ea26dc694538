use gcvs_core::simulation::calibrate::{calibrate_gamma_d_spec, GAMMA_B_MC_DRAWS, GAMMA_D_TOL, MOMENT_CHECK_TOL};
use gcvs_core::simulation::*;

const BATCHES: u64 = 10;
const BATCH_ROWS: usize = 1_000_000;

/// Mean and standard error of `β̂_EC − β̂` over independent batches.
fn batched_recovery(spec: &ScenarioSpec, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let draws: Vec<Vec<f64>> = (0..BATCHES)
        .map(|b| recovered_gamma(spec, BATCH_ROWS, seed + 1000 * b).unwrap())
        .collect();
    let k = draws[0].len();
    let nb = BATCHES as f64;
    let mean: Vec<f64> = (0..k).map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / nb).collect();
    let se = (0..k)
        .map(|j| {
            let v = draws.iter().map(|d| (d[j] - mean[j]).powi(2)).sum::<f64>() / (nb - 1.0);
            (v / nb).sqrt()
        })
        .collect();
    (mean, se)
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn gamma_b_closed_form_matches_simulation() {
    let rec = calibrate_gamma_b_checked(4, 11, GAMMA_B_MC_DRAWS, 200_000).unwrap();
    let closed = rec.correction_closed.as_ref().unwrap();
    let mc = rec.correction_mc.as_ref().unwrap();
    println!("closed {closed:?}\nsimulated {mc:?}");
    assert!(max_gap(closed, mc) < MOMENT_CHECK_TOL);
    assert_eq!(rec.gamma, calibrate_gamma_b(4).unwrap());
    let back = CalibrationRecord::from_json(&rec.to_json()).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn gamma_b_correction_is_shared_across_m() {
    let corr = gamma_b_correction(&[-0.2, 0.4, 1.0], [0.5, 0.25]).unwrap();
    for m in 0..=4 {
        let spec = ScenarioSpec::new(Scenario::B, m, 1, 0).unwrap();
        let g = calibrate_gamma_b(m).unwrap();
        for j in 0..4 {
            assert_eq!(g[j], spec.gamma_target[j] - corr[j]);
        }
    }
    assert!(gamma_b_correction(&[-0.2, 0.4, 1.0], [0.0, 0.0]).unwrap().iter().all(|c| *c == 0.0));
}

#[test]
fn gamma_b_recovers_target() {
    for m in [0, 4] {
        let spec = ScenarioSpec::new(Scenario::B, m, 1, 0).unwrap().with_gamma(calibrate_gamma_b(m).unwrap());
        let (mean, se) = batched_recovery(&spec, 300 + m as u64);
        for j in 0..4 {
            let z = (mean[j] - spec.gamma_target[j]) / se[j];
            println!("B m={m} component {j}: {:.5} (target {}) z={z:.2}", mean[j], spec.gamma_target[j]);
            assert!(z.abs() < 4.0);
        }
    }
}

#[test]
fn gamma_d_converges_and_verifies() {
    let rec = calibrate_gamma_d(0, 1_000_000, 1, GAMMA_D_TOL).unwrap();
    println!("m=0: gamma {:?} after {} iterations", rec.gamma, rec.iterations);
    assert!(max_gap(&rec.gamma_star, &rec.gamma_target) < GAMMA_D_TOL);
    assert!(rec.iterations <= 20);

    let rec = calibrate_gamma_d(4, 1_000_000, 1, GAMMA_D_TOL).unwrap();
    let spec = ScenarioSpec::new(Scenario::D, 4, 1, 0).unwrap().with_gamma(rec.gamma.clone());
    let (mean, se) = batched_recovery(&spec, 500);
    for j in 0..4 {
        let gap = (mean[j] - spec.gamma_target[j]).abs();
        println!("D m=4 component {j}: {:.5} (target {}) se={:.5}", mean[j], spec.gamma_target[j], se[j]);
        // The calibration sample is one batch in size, so its own noise is
        // `se·√BATCHES` on top of the verification noise.
        let se_total = se[j] * (1.0 + BATCHES as f64).sqrt();
        assert!(gap < GAMMA_D_TOL + 4.0 * se_total);
    }
}

#[test]
fn gamma_d_without_nonlinear_terms_is_the_target() {
    let mut spec = ScenarioSpec::new(Scenario::D, 2, 1, 0).unwrap();
    spec.nonlinear = [0.0, 0.0];
    let rec = calibrate_gamma_d_spec(&spec, 1_000_000, 2, GAMMA_D_TOL).unwrap();
    println!("linear D: gamma {:?} after {} iterations", rec.gamma, rec.iterations);
    assert!(rec.iterations <= 2);
    assert!(max_gap(&rec.gamma, &rec.gamma_target) < 0.015);
}

#[test]
fn gamma_d_is_deterministic() {
    let a = calibrate_gamma_d(2, 100_000, 9, GAMMA_D_TOL).unwrap();
    let b = calibrate_gamma_d(2, 100_000, 9, GAMMA_D_TOL).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}
