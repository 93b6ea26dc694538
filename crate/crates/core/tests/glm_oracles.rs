mod common;

use common::assert_orthogonal;
use gcvs_core::glm::*;
use gcvs_core::rng::stream;
use gcvs_core::simulation::scenario::BETA;
use gcvs_core::simulation::{generate, Scenario, ScenarioSpec};
use gcvs_core::{Error, OutcomeKind, StudyDataset, StudyRow};
use nalgebra::{DMatrix, DVector};

fn dataset(rows: &[(u8, u8, f64, &[f64])], kind: OutcomeKind) -> StudyDataset {
    StudyDataset::new(
        rows.iter().map(|&(z, a, y, x)| StudyRow::new(z, a, y, x.to_vec())).collect(),
        kind,
    )
    .unwrap()
}

fn intercept_only(ys: &[f64], kind: OutcomeKind) -> StudyDataset {
    let rows: Vec<(u8, u8, f64, &[f64])> = ys.iter().map(|&y| (1, 0, y, &[][..])).collect();
    dataset(&rows, kind)
}

#[test]
fn intercept_only_examples() {
    let d = intercept_only(&[1.0, 3.0], OutcomeKind::Continuous);
    let f = fit_mle(&d, &design_internal_control(&d), Link::Identity).unwrap();
    assert!((f.coef[0] - 2.0).abs() < 1e-12);
    assert_orthogonal(&d, &f);

    let d = intercept_only(&[1.0, 1.0, 0.0, 1.0], OutcomeKind::Binary);
    let f = fit_mle(&d, &design_internal_control(&d), Link::Logit).unwrap();
    assert!((f.coef[0] - 3f64.ln()).abs() < 1e-9);
    assert!((f.coef[0] - 1.0986).abs() < 1e-4);
    assert!((fitted_mean(&f, &[], None) - 0.75).abs() < 1e-9);
    assert_orthogonal(&d, &f);
}

#[test]
fn fitted_mean_examples() {
    let d = intercept_only(&[0.0, 1.0], OutcomeKind::Continuous);
    let mut f = fit_mle(&d, &design_internal_control(&d), Link::Identity).unwrap();
    f.coef = BETA.to_vec();
    f.design = DesignSpec::new(Stratum::InternalControl, vec![]);
    assert_eq!(fitted_mean(&f, &[0.0, 0.0, 0.0], None), 0.5);
    f.link = Link::Logit;
    f.coef = vec![0.0, 0.0, 0.0, 0.0];
    assert_eq!(fitted_mean(&f, &[1.3, -2.0, 7.0], None), 0.5);
}

#[test]
fn link_functions() {
    for u in [-40.0, -3.0, -0.1, 0.0, 0.2, 5.0, 40.0] {
        assert_eq!(Link::Identity.inverse(u), u);
        assert_eq!(Link::Identity.inverse_derivative(u), 1.0);
        let h = 1.0 / (1.0 + (-u as f64).exp());
        assert!((Link::Logit.inverse(u) - h).abs() < 1e-15);
        assert!((Link::Logit.inverse_derivative(u) - h * (1.0 - h)).abs() < 1e-15);
        assert_eq!(Link::Logit.inverse_derivative(u), Link::Logit.inverse_derivative(-u));
        assert!(Link::Logit.inverse_derivative(u) > 0.0);
    }
    assert!(Link::Logit.inverse_derivative(700.0) > 0.0);
    assert!(Link::Logit.inverse_derivative(-700.0) > 0.0);
}

const TEN_ROWS: [(f64, f64); 10] = [
    (-1.2, 0.31),
    (-0.7, 1.05),
    (-0.3, 0.64),
    (0.0, 1.90),
    (0.4, 1.42),
    (0.8, 2.71),
    (1.1, 2.05),
    (1.5, 3.33),
    (2.0, 3.01),
    (2.6, 4.48),
];

#[test]
fn least_squares_matches_normal_equations() {
    let rows: Vec<(u8, u8, f64, [f64; 1])> = TEN_ROWS.iter().map(|&(x, y)| (1, 0, y, [x])).collect();
    let refs: Vec<(u8, u8, f64, &[f64])> = rows.iter().map(|(z, a, y, x)| (*z, *a, *y, &x[..])).collect();
    let d = dataset(&refs, OutcomeKind::Continuous);
    let f = fit_mle(&d, &design_internal_control(&d), Link::Identity).unwrap();

    let n = TEN_ROWS.len() as f64;
    let sx: f64 = TEN_ROWS.iter().map(|r| r.0).sum();
    let sy: f64 = TEN_ROWS.iter().map(|r| r.1).sum();
    let sxx: f64 = TEN_ROWS.iter().map(|r| r.0 * r.0).sum();
    let sxy: f64 = TEN_ROWS.iter().map(|r| r.0 * r.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    assert!((f.coef[0] - intercept).abs() <= 1e-8, "{} vs {intercept}", f.coef[0]);
    assert!((f.coef[1] - slope).abs() <= 1e-8, "{} vs {slope}", f.coef[1]);
    assert_orthogonal(&d, &f);
}

fn design_matrix(d: &StudyDataset, design: &DesignSpec) -> (DMatrix<f64>, DVector<f64>) {
    let rows = design.rows(d);
    let q = design.width(d.p());
    let mut x = DMatrix::zeros(rows.len(), q);
    let mut buf = vec![0.0; q];
    for (k, &i) in rows.iter().enumerate() {
        design.fill_row(d.row(i), &mut buf);
        for j in 0..q {
            x[(k, j)] = buf[j];
        }
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| d.y(i)));
    (x, y)
}

#[test]
fn gaussian_fits_match_dense_least_squares() {
    for m in 0..=4 {
        let spec = ScenarioSpec::new(Scenario::A, m, 150, 150).unwrap();
        let d = generate(&spec, &mut stream(21, m as u64)).unwrap();
        for design in [
            design_internal_control(&d),
            design_external_control(&d),
            design_internal_treated(&d),
            design_pooled_control_ni(&d),
            design_pooled_control_full(&d),
            design_oracle(&d, &[1, 3]).unwrap(),
        ] {
            let f = fit_mle(&d, &design, Link::Identity).unwrap();
            let (x, y) = design_matrix(&d, &design);
            let xtx = x.transpose() * &x;
            let oracle = xtx.cholesky().unwrap().solve(&(x.transpose() * y));
            for j in 0..f.coef.len() {
                assert!((f.coef[j] - oracle[j]).abs() <= 1e-8, "{}: {j}", design.label());
            }
            assert_orthogonal(&d, &f);
        }
    }
}

#[test]
fn design_widths_and_oracle_limits() {
    let spec = ScenarioSpec::new(Scenario::A, 0, 20, 20).unwrap();
    let d = generate(&spec, &mut stream(1, 1)).unwrap();
    assert_eq!(design_pooled_control_full(&d).width(d.p()), 8);
    assert_eq!(design_oracle(&d, &[]).unwrap(), design_pooled_control_ni(&d));
    assert_eq!(design_oracle(&d, &[0, 1, 2, 3]).unwrap(), design_pooled_control_full(&d));
    assert!(matches!(design_oracle(&d, &[4]), Err(Error::Config(_))));
}

#[test]
fn saturated_design_splits_by_source() {
    for (scenario, link, seed) in [(Scenario::A, Link::Identity, 3), (Scenario::C, Link::Logit, 4)] {
        for m in [0, 2, 4] {
            let spec = ScenarioSpec::new(scenario, m, 600, 600).unwrap();
            let d = generate(&spec, &mut stream(seed, m as u64)).unwrap();
            let full = fit_mle(&d, &design_pooled_control_full(&d), link).unwrap();
            let int = fit_mle(&d, &design_internal_control(&d), link).unwrap();
            let ext = fit_mle(&d, &design_external_control(&d), link).unwrap();
            for j in 0..4 {
                assert!((full.coef[j] - int.coef[j]).abs() <= 1e-6);
                assert!((full.coef[j] + full.coef[4 + j] - ext.coef[j]).abs() <= 1e-6);
            }
            for f in [&full, &int, &ext] {
                assert_orthogonal(&d, f);
            }
        }
    }
}

#[test]
fn deviance_never_increases_and_information_is_spd() {
    for (scenario, link) in [(Scenario::A, Link::Identity), (Scenario::C, Link::Logit)] {
        for rep in 0..10 {
            let spec = ScenarioSpec::new(scenario, rep % 5, 100, 100).unwrap();
            let d = generate(&spec, &mut stream(8, rep as u64)).unwrap();
            for design in [design_pooled_control_full(&d), design_internal_treated(&d)] {
                let f = fit_mle(&d, &design, link).unwrap();
                assert!(f.deviance_trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", f.deviance_trace);
                assert_eq!(*f.deviance_trace.last().unwrap(), f.deviance);
                let info = &f.info_matrix;
                assert!((info - info.transpose()).amax() <= 1e-12 * info.amax());
                let eig = info.clone().symmetric_eigen();
                assert!(eig.eigenvalues.min() > 0.0);
                assert_orthogonal(&d, &f);
                assert!(f.max_scaled_score <= 1e-8);
            }
        }
    }
}

#[test]
fn rank_deficiency_and_separation_are_reported() {
    let rows: Vec<(u8, u8, f64, &[f64])> = vec![
        (1, 0, 1.0, &[1.0, 2.0]),
        (1, 0, 2.0, &[2.0, 4.0]),
        (1, 0, 3.0, &[3.0, 6.0]),
        (1, 1, 3.0, &[3.0, 6.0]),
    ];
    let d = dataset(&rows, OutcomeKind::Continuous);
    let e = fit_mle(&d, &design_internal_control(&d), Link::Identity).unwrap_err();
    assert!(matches!(e, Error::RankDeficient { rank: 2, cols: 3, .. }), "{e}");
    assert!(e.is_fit_failure());

    let rows: Vec<(u8, u8, f64, &[f64])> = vec![
        (1, 0, 0.0, &[-2.0]),
        (1, 0, 0.0, &[-1.0]),
        (1, 0, 1.0, &[1.0]),
        (1, 0, 1.0, &[2.0]),
    ];
    let d = dataset(&rows, OutcomeKind::Binary);
    let e = fit_mle(&d, &design_internal_control(&d), Link::Logit).unwrap_err();
    assert!(matches!(e, Error::Separation { .. }), "{e}");

    let d = intercept_only(&[1.0], OutcomeKind::Continuous);
    let e = fit_mle(&d, &design_external_control(&d), Link::Identity).unwrap_err();
    assert!(matches!(e, Error::EmptyStratum { .. }));
}

/// External-control fit at n₀ = 10⁶ against the generating coefficients,
/// with standard errors from the inverse information.
fn large_n_recovery(scenario: Scenario, link: Link, seed: u64) {
    let spec = ScenarioSpec::new(scenario, 0, 10, 1_000_000).unwrap();
    let d = generate(&spec, &mut stream(seed, 0)).unwrap();
    let f = fit_mle(&d, &design_external_control(&d), link).unwrap();
    assert_orthogonal(&d, &f);
    let inv = f.info_matrix.clone().try_inverse().unwrap();
    let scale = match link {
        Link::Identity => f.deviance / (f.rows.len() - f.coef.len()) as f64,
        Link::Logit => 1.0,
    };
    for j in 0..4 {
        let se = (scale * inv[(j, j)]).sqrt();
        let z = (f.coef[j] - BETA[j]) / se;
        println!("{scenario:?} coef {j}: {:.5} (se {se:.5}, z {z:.2})", f.coef[j]);
        assert!(z.abs() < 4.0);
    }
}

#[test]
fn linear_model_recovers_generating_coefficients() {
    large_n_recovery(Scenario::A, Link::Identity, 31);
}

#[test]
fn logistic_model_recovers_generating_coefficients() {
    large_n_recovery(Scenario::C, Link::Logit, 32);
}
