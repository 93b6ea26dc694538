use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;
use gcvs_core::simulation::truth::{mc_mu0, TRUTH_DRAWS, TRUTH_SEED};
use gcvs_core::simulation::{true_mu0, truth, Scenario, ScenarioSpec, TruthOptions};
use gcvs_core::estimators::EffectMeasure;

const AGREE: f64 = 1e-4;

/// `E[expit(η(1, x))]` for `x ~ N₃(ν₁, I)` by a tensor Gauss-Hermite rule.
fn quadrature_mu0(spec: &ScenarioSpec, nodes: usize) -> f64 {
    let rule = GaussHermite::new(NonZeroUsize::new(nodes).unwrap());
    let pts: Vec<(f64, f64)> = rule
        .iter()
        .map(|(t, w)| (std::f64::consts::SQRT_2 * t, w / std::f64::consts::PI.sqrt()))
        .collect();
    let zero = [0.0; 4];
    let mut total = 0.0;
    for &(t1, w1) in &pts {
        for &(t2, w2) in &pts {
            for &(t3, w3) in &pts {
                let x = [spec.nu1[0] + t1, spec.nu1[1] + t2, spec.nu1[2] + t3];
                let eta = spec.eta(1, &x, &zero);
                total += w1 * w2 * w3 / (1.0 + (-eta).exp());
            }
        }
    }
    total
}

/// The linear predictor of C is Gaussian, which reduces the mean to one dimension.
fn linear_quadrature_mu0(spec: &ScenarioSpec) -> f64 {
    let b = &spec.beta;
    let mean = b[0] + (0..3).map(|j| b[j + 1] * spec.nu1[j]).sum::<f64>();
    let sd = b[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let rule = GaussHermite::new(NonZeroUsize::new(80).unwrap());
    rule.integrate(|t| 1.0 / (1.0 + (-(mean + std::f64::consts::SQRT_2 * sd * t)).exp()))
        / std::f64::consts::PI.sqrt()
}

#[test]
fn quadrature_rules_agree() {
    let c = ScenarioSpec::new(Scenario::C, 0, 1, 1).unwrap();
    let one = linear_quadrature_mu0(&c);
    let three = quadrature_mu0(&c, 40);
    println!("C: 1-D {one:.8} 3-D {three:.8}");
    assert!((one - three).abs() < 1e-10);
    let d = ScenarioSpec::new(Scenario::D, 0, 1, 1).unwrap();
    let coarse = quadrature_mu0(&d, 40);
    let fine = quadrature_mu0(&d, 60);
    println!("D: 40 nodes {coarse:.8} 60 nodes {fine:.8}");
    assert!((coarse - fine).abs() < 1e-8);
}

#[test]
fn monte_carlo_truth_matches_quadrature() {
    for (s, exact) in [
        (Scenario::C, linear_quadrature_mu0(&ScenarioSpec::new(Scenario::C, 0, 1, 1).unwrap())),
        (Scenario::D, quadrature_mu0(&ScenarioSpec::new(Scenario::D, 0, 1, 1).unwrap(), 60)),
    ] {
        let spec = ScenarioSpec::new(s, 2, 1, 1).unwrap();
        let mc = true_mu0(&spec, &TruthOptions::default()).unwrap();
        println!("{s:?}: Monte Carlo {mc:.6} quadrature {exact:.6}");
        assert!((mc - exact).abs() < AGREE);
    }
}

#[test]
fn monte_carlo_truth_is_seed_stable() {
    let spec = ScenarioSpec::new(Scenario::C, 0, 1, 1).unwrap();
    let a = mc_mu0(&spec, TRUTH_DRAWS, TRUTH_SEED);
    let b = mc_mu0(&spec, TRUTH_DRAWS, TRUTH_SEED + 1);
    println!("seeds: {a:.6} {b:.6}");
    assert!((a - b).abs() < AGREE);
}

#[test]
fn truth_does_not_depend_on_m_or_sizes() {
    let opts = TruthOptions {
        draws: 1_000_000,
        ..TruthOptions::default()
    };
    let base = truth(&ScenarioSpec::new(Scenario::D, 0, 200, 200).unwrap(), EffectMeasure::LogOddsRatio, &opts).unwrap();
    assert_eq!(base.delta, 0.0);
    assert_eq!(base.mu0, base.mu1);
    for m in 1..=4 {
        let t = truth(&ScenarioSpec::new(Scenario::D, m, 400, 100).unwrap(), EffectMeasure::LogOddsRatio, &opts).unwrap();
        assert_eq!(t, base);
    }
}
