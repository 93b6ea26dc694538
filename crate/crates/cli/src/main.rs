use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gcvs_core::estimators::ControlFit;
use gcvs_core::lasso::CvTrace;
use gcvs_core::rng::stream;
use gcvs_core::simulation::{
    calibrate_gamma_b, calibrate_gamma_b_checked, calibrate_gamma_d, run_mc, truth,
    CalibrationRecord, McOptions, Scenario, ScenarioSpec, TruthOptions,
};
use gcvs_core::simulation::calibrate::{GAMMA_B_MC_DRAWS, GAMMA_D_TOL};
use gcvs_core::{
    analytic, bootstrap, estimate_methods, load_csv, CvOptions, EffectMeasure, Error,
    InferenceReport, MethodKind, OutcomeKind, PointEstimates, Result,
};

#[derive(Parser, Debug)]
#[command(name = "gcvs", version, about = "Hybrid-control trial estimation and simulation")]
struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true, env = "GCVS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate treatment effects from a study CSV
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study for one scenario
    Simulate(SimulateArgs),
    /// Calibrate the interaction vector of scenario B or D
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Outcome {
    Continuous,
    Binary,
}

impl From<Outcome> for OutcomeKind {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Continuous => OutcomeKind::Continuous,
            Outcome::Binary => OutcomeKind::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SeMode {
    Analytic,
    Bootstrap,
    Both,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// CSV with header z,a,y,x1,...,xp
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    outcome: Outcome,
    /// difference, log_ratio or log_odds_ratio
    #[arg(long, default_value = "difference", value_parser = parse_effect)]
    effect: EffectMeasure,
    /// Comma-separated subset of UA-RCT, UA-pooled, GC-RCT, GC-NI, GC-VS
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<MethodKind>>,
    #[arg(long, value_enum, default_value = "analytic")]
    se: SeMode,
    #[arg(long, default_value_t = 1000)]
    boot_reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Result table (CSV)
    #[arg(long)]
    out: PathBuf,
    /// Cross-validation trace of the GC-VS fit (CSV)
    #[arg(long)]
    cv_trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    n1: usize,
    #[arg(long, default_value_t = 200)]
    n0: usize,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<MethodKind>>,
    #[arg(long, default_value = "difference", value_parser = parse_effect)]
    effect: EffectMeasure,
    /// Calibration file from `gcvs calibrate` (required for D; B falls back
    /// to the closed form)
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Directory caching the simulated true means of C and D
    #[arg(long)]
    truth_cache: Option<PathBuf>,
    #[arg(long, default_value_t = gcvs_core::simulation::truth::TRUTH_DRAWS)]
    truth_draws: u64,
    /// Summary table (CSV)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    seed: u64,
    /// Rows per source in the calibration or verification sample
    #[arg(long, default_value_t = 1_000_000)]
    n_cal: usize,
    /// Draws for the simulated moment check (B)
    #[arg(long, default_value_t = GAMMA_B_MC_DRAWS)]
    mc_draws: usize,
    #[arg(long, default_value_t = GAMMA_D_TOL)]
    tol: f64,
    /// Calibration file (JSON)
    #[arg(long)]
    out: PathBuf,
}

fn parse_effect(s: &str) -> std::result::Result<EffectMeasure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<MethodKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

const ANALYZE_HEADER: [&str; 15] = [
    "method", "se_method", "mu0", "mu1", "delta", "se_mu0", "se_mu1", "se_delta", "ci_mu0_lo",
    "ci_mu0_hi", "ci_mu1_lo", "ci_mu1_hi", "ci_delta_lo", "ci_delta_hi", "effect",
];

fn write_analysis(path: &Path, rows: &[(PointEstimates, InferenceReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(ANALYZE_HEADER).map_err(csv_io)?;
    for (e, r) in rows {
        let mut rec = vec![e.method.name().to_string(), r.se_method.name().to_string()];
        rec.extend(
            [
                e.mu0, e.mu1, e.delta, r.se_mu0, r.se_mu1, r.se_delta, r.ci_mu0.0, r.ci_mu0.1,
                r.ci_mu1.0, r.ci_mu1.1, r.ci_delta.0, r.ci_delta.1,
            ]
            .map(fmt4),
        );
        rec.push(e.effect.name().to_string());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_cv_trace(path: &Path, trace: &CvTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["lambda", "mean_deviance", "fold_sd", "chosen"])
        .map_err(csv_io)?;
    for (k, l) in trace.lambdas.iter().enumerate() {
        w.write_record([
            format!("{l:.6e}"),
            format!("{:.6}", trace.mean_deviance[k]),
            format!("{:.6}", trace.fold_sd[k]),
            u8::from(k == trace.chosen).to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let kind = OutcomeKind::from(args.outcome);
    args.effect.check_outcome(kind)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let d = load_csv(&args.data, kind)?;
    d.require_internal_controls()?;
    let methods = args.methods.clone().unwrap_or_else(|| MethodKind::ALL.to_vec());
    let cv = CvOptions::default();
    // the main fit takes the last stream; bootstrap replicate b takes stream b
    let mut rng = stream(args.seed, u64::MAX);
    let ests = estimate_methods(&d, &methods, args.effect, &cv, &mut rng)?;

    let mut rows = Vec::new();
    for est in &ests {
        if matches!(args.se, SeMode::Analytic | SeMode::Both) {
            rows.push((est.clone(), analytic(&d, est, args.alpha)?));
        }
        if matches!(args.se, SeMode::Bootstrap | SeMode::Both) {
            rows.push((
                est.clone(),
                bootstrap(&d, est, args.boot_reps, args.alpha, args.seed, &cv)?,
            ));
        }
    }
    write_analysis(&args.out, &rows)?;

    let c = d.counts();
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "n = {} (internal treated {}, internal control {}, external control {}), effect = {}",
        d.n(),
        c.n_trt,
        c.n_ic,
        c.n_ec,
        args.effect
    )?;
    writeln!(
        out,
        "{:<10} {:<9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "method", "se", "mu0", "mu1", "delta", "se_mu0", "se_mu1", "se_delta"
    )?;
    for (e, r) in &rows {
        writeln!(
            out,
            "{:<10} {:<9} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            e.method.name(),
            r.se_method.name(),
            e.mu0,
            e.mu1,
            e.delta,
            r.se_mu0,
            r.se_mu1,
            r.se_delta
        )?;
    }
    for e in &ests {
        if let Some(ControlFit::Vs(pen)) = e.fits.as_ref().map(|f| &f.control) {
            writeln!(
                out,
                "GC-VS: lambda = {:.4e}, selected interactions = {:?}",
                pen.lambda, pen.active_set
            )?;
            if let (Some(path), Some(trace)) = (&args.cv_trace, &pen.cv_trace) {
                write_cv_trace(path, trace)?;
            }
        }
    }
    Ok(())
}

fn load_calibration(path: &Path, spec: &ScenarioSpec) -> Result<Vec<f64>> {
    let rec = CalibrationRecord::from_json(&fs::read_to_string(path)?)?;
    if rec.scenario != spec.scenario || rec.m != spec.m {
        return Err(Error::Config(format!(
            "calibration file is for scenario {} m={}, not {} m={}",
            rec.scenario, rec.m, spec.scenario, spec.m
        )));
    }
    Ok(rec.gamma)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut spec = ScenarioSpec::new(args.scenario, args.m, args.n1, args.n0)?;
    if args.scenario.needs_calibration() {
        let gamma = match (&args.calibration, args.scenario) {
            (Some(path), _) => load_calibration(path, &spec)?,
            (None, Scenario::B) => calibrate_gamma_b(args.m)?,
            (None, s) => return Err(Error::CalibrationMissing(s.letter())),
        };
        spec = spec.with_gamma(gamma);
    }
    let mut opts = McOptions::new(args.reps, args.seed);
    opts.effect = args.effect;
    if let Some(m) = &args.methods {
        opts.methods = m.clone();
    }
    let truth_opts = TruthOptions {
        draws: args.truth_draws,
        cache_dir: args.truth_cache.clone(),
        ..TruthOptions::default()
    };
    let t = truth(&spec, args.effect, &truth_opts)?;
    eprintln!(
        "scenario {} m={} n1={} n0={}: {} replicates, true mu0 = {:.6}",
        spec.scenario, spec.m, spec.n1, spec.n0, args.reps, t.mu0
    );
    let summary = run_mc(&spec, &opts, &t)?;
    eprintln!(
        "done: {} replicates kept, {} failed",
        summary.reps,
        summary.failures.len()
    );
    summary.save_csv(&args.out)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let rec = match args.scenario {
        Scenario::B => calibrate_gamma_b_checked(args.m, args.seed, args.mc_draws, args.n_cal)?,
        Scenario::D => calibrate_gamma_d(args.m, args.n_cal, args.seed, args.tol)?,
        s => {
            return Err(Error::Config(format!(
                "scenario {s} has no calibration (no calibration needed)"
            )))
        }
    };
    if let Some(mc) = &rec.correction_mc {
        log::info!("simulated moment correction {mc:?}");
    }
    log::info!(
        "gamma = {:?}; recovered gamma* = {:?} (target {:?})",
        rec.gamma,
        rec.gamma_star,
        rec.gamma_target
    );
    println!(
        "gamma = [{}]",
        rec.gamma.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
    );
    println!(
        "gamma* = [{}]",
        rec.gamma_star.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
    );
    fs::write(&args.out, rec.to_json())?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_fit_failure() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
