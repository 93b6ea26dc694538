use std::sync::OnceLock;

use gcvs_core::estimators::MethodKind;
use gcvs_core::simulation::*;

const REPS: usize = 2000;
const SEED: u64 = 2024;

struct Study {
    scenario: Scenario,
    m: usize,
    n: usize,
    summary: McSummary,
}

fn spec(scenario: Scenario, m: usize, n: usize) -> ScenarioSpec {
    let s = ScenarioSpec::new(scenario, m, n, n).unwrap();
    match scenario {
        Scenario::B => s.with_gamma(calibrate_gamma_b(m).unwrap()),
        _ => s,
    }
}

fn run(scenario: Scenario, m: usize, n: usize, opts: &McOptions) -> McSummary {
    let spec = spec(scenario, m, n);
    let truth = truth(&spec, opts.effect, &TruthOptions::default()).unwrap();
    run_mc(&spec, opts, &truth).unwrap()
}

/// Full-method studies for A (every m) and B (m = 0, 2, 4) at both sizes.
fn continuous_studies() -> &'static [Study] {
    static CELL: OnceLock<Vec<Study>> = OnceLock::new();
    CELL.get_or_init(|| {
        let opts = McOptions::new(REPS, SEED);
        let mut out = Vec::new();
        for (scenario, ms) in [(Scenario::A, vec![0, 1, 2, 3, 4]), (Scenario::B, vec![0, 2, 4])] {
            for m in ms {
                for n in [200, 400] {
                    let summary = run(scenario, m, n, &opts);
                    assert_eq!(summary.reps, REPS, "{scenario:?} m={m} n={n} dropped replicates");
                    out.push(Study { scenario, m, n, summary });
                }
            }
        }
        out
    })
}

fn find(scenario: Scenario, m: usize, n: usize) -> &'static McSummary {
    &continuous_studies()
        .iter()
        .find(|s| s.scenario == scenario && s.m == m && s.n == n)
        .unwrap()
        .summary
}

#[test]
fn coverage_of_consistent_methods() {
    let mut bad = Vec::new();
    for st in continuous_studies() {
        for method in [MethodKind::UaRct, MethodKind::GcRct, MethodKind::GcVs] {
            for estimand in Estimand::ALL {
                let cp = st.summary.row(method, estimand).unwrap().cp;
                println!("{:?} m={} n={} {method} {estimand}: cp {cp:.4}", st.scenario, st.m, st.n);
                if !(0.92..=0.96).contains(&cp) {
                    bad.push(format!("{:?} m={} n={} {method} {estimand}: {cp:.4}", st.scenario, st.m, st.n));
                }
            }
        }
    }
    assert!(bad.is_empty(), "coverage outside [0.92, 0.96]: {bad:#?}");
}

#[test]
fn bias_shrinks_with_sample_size() {
    for (scenario, ms) in [(Scenario::A, vec![0, 1, 2, 3, 4]), (Scenario::B, vec![0, 2, 4])] {
        for m in ms {
            let (small, large) = (find(scenario, m, 200), find(scenario, m, 400));
            for method in [MethodKind::UaRct, MethodKind::GcRct, MethodKind::GcVs] {
                for estimand in Estimand::ALL {
                    let a = small.row(method, estimand).unwrap();
                    let b = large.row(method, estimand).unwrap();
                    let mcse = ((a.sd.unwrap().powi(2) + b.sd.unwrap().powi(2)) / REPS as f64).sqrt();
                    assert!(
                        b.bias.abs() <= a.bias.abs() + 2.0 * mcse,
                        "{scenario:?} m={m} {method} {estimand}: {:.4} -> {:.4}",
                        a.bias,
                        b.bias
                    );
                }
            }
        }
    }
}

#[test]
fn trial_only_summaries_do_not_depend_on_m() {
    let base = find(Scenario::A, 0, 200);
    for m in 1..=4 {
        let other = find(Scenario::A, m, 200);
        for estimand in Estimand::ALL {
            assert_eq!(base.row(MethodKind::UaRct, estimand), other.row(MethodKind::UaRct, estimand));
            assert_eq!(base.row(MethodKind::GcRct, estimand), other.row(MethodKind::GcRct, estimand));
        }
    }
}

#[test]
fn reference_biases() {
    let ni = find(Scenario::A, 1, 200).row(MethodKind::GcNi, Estimand::Mu0).unwrap().bias;
    let pooled = find(Scenario::A, 0, 200).row(MethodKind::UaPooled, Estimand::Mu0).unwrap().bias;
    println!("A m=1 GC-NI mu0 bias {ni:.4}; A m=0 UA-pooled mu0 bias {pooled:.4}");
    assert!((ni - 0.132).abs() <= 0.015);
    assert!((pooled + 0.134).abs() <= 0.015);
}

#[test]
fn analytic_se_tracks_monte_carlo_sd() {
    let row = find(Scenario::A, 0, 200).row(MethodKind::GcVs, Estimand::Mu0).unwrap();
    println!("A m=0 GC-VS mu0: mean SE {:.4} MC SD {:.4}", row.mean_se, row.sd.unwrap());
    assert!((row.mean_se / 0.067 - 1.0).abs() <= 0.15);

    let mut opts = McOptions::new(REPS, SEED);
    opts.methods = vec![MethodKind::GcNi];
    let c = run(Scenario::C, 0, 400, &opts);
    let row = c.row(MethodKind::GcNi, Estimand::Delta).unwrap();
    println!("C m=0 n=400 GC-NI delta: mean SE {:.4} MC SD {:.4}", row.mean_se, row.sd.unwrap());
    assert!((row.mean_se / 0.039 - 1.0).abs() <= 0.15);
}

#[test]
fn monte_carlo_is_deterministic() {
    let mut opts = McOptions::new(40, 5);
    opts.methods = vec![MethodKind::UaRct, MethodKind::GcVs];
    let a = run(Scenario::A, 2, 100, &opts);
    let b = run(Scenario::A, 2, 100, &opts);
    assert_eq!(a, b);
    assert_eq!(a.to_csv_string(), b.to_csv_string());
}

#[test]
fn single_replicate_summary() {
    let opts = McOptions::new(1, 3);
    let s = run(Scenario::A, 0, 100, &opts);
    for r in &s.rows {
        assert_eq!(r.sd, None);
        assert!(r.cp == 0.0 || r.cp == 1.0);
    }
    assert!(s.to_csv_string().lines().skip(1).all(|l| l.split(',').nth(7) == Some("NA")));
}

#[test]
fn calibration_is_required() {
    let s = ScenarioSpec::new(Scenario::B, 1, 50, 50).unwrap();
    let t = Truth { mu0: 0.5, mu1: 0.5, delta: 0.0 };
    assert!(run_mc(&s, &McOptions::new(2, 1), &t).is_err());
    assert!(run_mc(&spec(Scenario::A, 0, 50), &McOptions::new(0, 1), &t).is_err());
}
