//! `shapelift`: shape distances, Fréchet means, two-sample tests, level and
//! power studies, filament landmarks and Hopf-chart plot data.
//!
//! Exit codes: 0 success, 2 numerical failure, 64 usage error, 65 malformed
//! or unusable data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use shapelift::filaments::{extract_landmarks, ingest_polylines, LandmarkAudit, LandmarkOptions, DEFAULT_MAX_SHIFT, MIN_LANDMARK_POINTS, DEFAULT_RESOLUTION};
use shapelift::geometry::to_preshape;
use shapelift::inference::{
    bootstrap_tests, quantile_test, BootstrapOptions, Calibration, TestOptions, TestOutcome, TestVariant,
    DEFAULT_RESAMPLE_TOL, MIN_RESAMPLES,
};
use shapelift::io::{read_configuration, read_samples, write_configuration};
use shapelift::shape_spaces::planar::{hopf_fold, hopf_of_preshape};
use shapelift::simulation::{power_curve_csv, run_level_power_study, table_csv, StudyConfig};
use shapelift::{frechet_mean, shape_distance, Configuration, MeanOptions, MeanResult, PreShape, ShapeError, ShapeSpaceKind};
use thiserror::Error;

const EXIT_NUMERICAL: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Shape(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Shape(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "shapelift", version, about = "Statistics on Kendall shape spaces and their reflection and reverse-labeling quotients")]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Single thread, sequential reductions: bit-exact output everywhere.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shape distance between two configurations, in radians.
    Distance {
        /// First configuration (CSV `x,y[,z]` or JSON).
        a: PathBuf,
        /// Second configuration.
        b: PathBuf,
        #[command(flatten)]
        kind: KindArg,
    },
    /// Fréchet mean of a sample; prints a JSON report.
    Mean {
        /// Samples (CSV `sample_id,x,y[,z]` or JSON).
        samples: PathBuf,
        #[command(flatten)]
        kind: KindArg,
        /// Residual tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Write the mean configuration here (CSV, or JSON by extension).
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Two-sample test; prints a JSON report whatever the decision.
    Test(TestArgs),
    /// Level/power study from a JSON or TOML config; prints the table CSV.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Bootstrap resamples per test.
        #[arg(long, value_name = "B")]
        bootstrap: Option<usize>,
        #[arg(long)]
        noise_sd: Option<f64>,
        /// Write the table here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Also write the wide power-curve CSV here.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Five landmarks per traced curve (CSV `curve_id,x,y` or JSON).
    Landmarks {
        polylines: PathBuf,
        /// Resampling segments per curve.
        #[arg(long, default_value_t = DEFAULT_RESOLUTION, conflicts_with = "step")]
        resolution: usize,
        /// Absolute resampling step, instead of `--resolution`.
        #[arg(long)]
        step: Option<f64>,
        /// Shift budget of the equalization, as a fraction of the span.
        #[arg(long, default_value_t = DEFAULT_MAX_SHIFT)]
        max_shift: f64,
        /// Write the landmark CSV here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Write the per-curve audit JSON here.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Hopf-chart coordinates of planar triangles, folded into the quotient.
    Hopf {
        samples: PathBuf,
        #[command(flatten)]
        kind: KindArg,
        /// Write the CSV here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct KindArg {
    /// rotation, reflection or rr (reverse labeling and reflection).
    #[arg(long, default_value = "rotation", value_parser = parse_kind)]
    kind: ShapeSpaceKind,
}

#[derive(Debug, Args)]
struct TestArgs {
    w: PathBuf,
    z: PathBuf,
    #[command(flatten)]
    kind: KindArg,
    /// pooled_tangent, pooled_intrinsic, individual, individual_asymmetric,
    /// or all.
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// bootstrap or quantile.
    #[arg(long, default_value = "bootstrap")]
    calibration: String,
    /// Bootstrap resamples.
    #[arg(long, value_name = "B", default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ShapeSpaceKind, String> {
    s.parse().map_err(|e: ShapeError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = match (cli.strict, cli.threads) {
        (true, _) => Some(1),
        (false, Some(0)) => return Err(usage("--threads must be at least 1")),
        (false, t) => t,
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot set up thread pool: {e}")))?;
    }
    let parallel = !cli.strict;
    match cli.command {
        Command::Distance { a, b, kind } => cmd_distance(&a, &b, kind.kind),
        Command::Mean {
            samples,
            kind,
            tol,
            max_iter,
            output,
            report,
        } => {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(usage(format!("--tol must be positive, got {tol}")));
            }
            if max_iter == 0 {
                return Err(usage("--max-iter must be at least 1"));
            }
            let opts = MeanOptions {
                tol,
                max_iter,
                parallel,
                ..MeanOptions::default()
            };
            cmd_mean(&samples, kind.kind, &opts, output.as_deref(), report.as_deref())
        }
        Command::Test(args) => cmd_test(&args, parallel),
        Command::Simulate {
            config,
            replicates,
            seed,
            bootstrap,
            noise_sd,
            output,
            curve,
        } => {
            let mut cfg = StudyConfig::from_path(&config)?;
            if let Some(r) = replicates {
                if r == 0 {
                    return Err(usage("--replicates must be at least 1"));
                }
                cfg.replicates = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = bootstrap {
                check_resamples(b)?;
                cfg.bootstrap_b = b;
            }
            if let Some(sd) = noise_sd {
                if !(sd > 0.0 && sd.is_finite()) {
                    return Err(usage(format!("--noise-sd must be positive, got {sd}")));
                }
                cfg.noise_sd = sd;
            }
            cmd_simulate(&cfg, output.as_deref(), curve.as_deref())
        }
        Command::Landmarks {
            polylines,
            resolution,
            step,
            max_shift,
            output,
            audit,
        } => {
            if resolution < MIN_LANDMARK_POINTS - 1 {
                return Err(usage(format!("--resolution must be at least {}, got {resolution}", MIN_LANDMARK_POINTS - 1)));
            }
            if step.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
                return Err(usage("--step must be positive"));
            }
            if !(max_shift >= 0.0 && max_shift.is_finite()) {
                return Err(usage(format!("--max-shift must be nonnegative, got {max_shift}")));
            }
            let opts = LandmarkOptions {
                resolution,
                step,
                max_shift,
            };
            cmd_landmarks(&polylines, &opts, output.as_deref(), audit.as_deref())
        }
        Command::Hopf { samples, kind, output } => cmd_hopf(&samples, kind.kind, output.as_deref()),
    }
}

fn check_resamples(b: usize) -> CliResult<()> {
    if b < MIN_RESAMPLES {
        return Err(usage(format!("--bootstrap must be at least {MIN_RESAMPLES}, got {b}")));
    }
    Ok(())
}

/// Writes to `path`, or to standard output without one.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

fn preshapes(path: &Path) -> CliResult<Vec<PreShape>> {
    let samples = read_samples(path)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("{}: no samples", path.display())));
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, c)| to_preshape(c).map_err(|e| CliError::Data(format!("{}: sample {i}: {e}", path.display()))))
        .collect()
}

fn same_shape(a: &Configuration, b: &Configuration) -> bool {
    a.matrix().shape() == b.matrix().shape()
}

fn cmd_distance(a: &Path, b: &Path, kind: ShapeSpaceKind) -> CliResult<()> {
    let ca = read_configuration(a)?;
    let cb = read_configuration(b)?;
    if !same_shape(&ca, &cb) {
        return Err(CliError::Data(format!(
            "{} and {} differ in landmark count or dimension",
            a.display(),
            b.display()
        )));
    }
    let pa = to_preshape(&ca).map_err(|e| CliError::Data(format!("{}: {e}", a.display())))?;
    let pb = to_preshape(&cb).map_err(|e| CliError::Data(format!("{}: {e}", b.display())))?;
    println!("{:.12}", shape_distance(&pa, &pb, kind));
    Ok(())
}

#[derive(Serialize)]
struct MeanReport<'a> {
    kind: ShapeSpaceKind,
    samples: usize,
    /// Landmarks of the mean pre-shape.
    mean: Vec<Vec<f64>>,
    #[serde(flatten)]
    result: &'a MeanResult,
}

fn cmd_mean(
    path: &Path,
    kind: ShapeSpaceKind,
    opts: &MeanOptions,
    output: Option<&Path>,
    report: Option<&Path>,
) -> CliResult<()> {
    let samples = preshapes(path)?;
    let result = frechet_mean(&samples, kind, opts)?;
    if !result.converged {
        eprintln!(
            "warning: no convergence after {} iterations (residual {:e})",
            result.iterations, result.residual
        );
    }
    let mean = result.mean.to_configuration();
    if let Some(out) = output {
        write_configuration(out, &mean)?;
    }
    let text = to_json(&MeanReport {
        kind,
        samples: samples.len(),
        mean: mean.to_landmarks(),
        result: &result,
    });
    emit(report, &text)
}

#[derive(Serialize)]
struct TestReport {
    kind: ShapeSpaceKind,
    n: usize,
    m: usize,
    alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    outcomes: Vec<TestOutcome>,
}

fn cmd_test(args: &TestArgs, parallel: bool) -> CliResult<()> {
    let kind = args.kind.kind;
    let variants = if args.variant.eq_ignore_ascii_case("all") {
        TestVariant::ALL.to_vec()
    } else {
        args.variant
            .split(',')
            .map(|v| v.trim().parse::<TestVariant>().map_err(|e| usage(e.to_string())))
            .collect::<CliResult<Vec<_>>>()?
    };
    let calibration = match args.calibration.to_ascii_lowercase().as_str() {
        "bootstrap" => Calibration::Bootstrap,
        "quantile" => Calibration::Quantile,
        other => return Err(usage(format!("unknown calibration '{other}' (expected bootstrap or quantile)"))),
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if calibration == Calibration::Bootstrap {
        check_resamples(args.bootstrap)?;
    }
    let w = preshapes(&args.w)?;
    let z = preshapes(&args.z)?;
    if w[0].matrix().shape() != z[0].matrix().shape() {
        return Err(CliError::Data(format!(
            "{} and {} differ in landmark count or dimension",
            args.w.display(),
            args.z.display()
        )));
    }
    let mean = MeanOptions {
        parallel,
        ..MeanOptions::default()
    };
    let outcomes = match calibration {
        Calibration::Bootstrap => {
            let opts = BootstrapOptions {
                alpha: args.alpha,
                resamples: args.bootstrap,
                seed: args.seed,
                mean,
                resample_tol: DEFAULT_RESAMPLE_TOL,
                parallel,
            };
            bootstrap_tests(&w, &z, kind, &variants, &opts)?
        }
        Calibration::Quantile => {
            let opts = TestOptions { alpha: args.alpha, mean };
            variants
                .iter()
                .map(|&v| quantile_test(&w, &z, kind, v, &opts))
                .collect::<shapelift::Result<Vec<_>>>()?
        }
    };
    for o in &outcomes {
        for warning in &o.warnings {
            eprintln!("warning: {}: {warning}", o.variant);
        }
    }
    let report = TestReport {
        kind,
        n: w.len(),
        m: z.len(),
        alpha: args.alpha,
        seed: (calibration == Calibration::Bootstrap).then_some(args.seed),
        outcomes,
    };
    emit(args.output.as_deref(), &to_json(&report))
}

fn cmd_simulate(cfg: &StudyConfig, output: Option<&Path>, curve: Option<&Path>) -> CliResult<()> {
    if cfg.bootstrap_b < 1000 {
        eprintln!(
            "warning: {} bootstrap resamples; at least 1000 are recommended",
            cfg.bootstrap_b
        );
    }
    let result = run_level_power_study(cfg)?;
    emit(output, &table_csv(&result))?;
    if let Some(path) = curve {
        emit(Some(path), &power_curve_csv(&result))?;
    }
    Ok(())
}

fn cmd_landmarks(path: &Path, opts: &LandmarkOptions, output: Option<&Path>, audit: Option<&Path>) -> CliResult<()> {
    let ingested = ingest_polylines(path)?;
    for w in &ingested.warnings {
        eprintln!("warning: {w}");
    }
    let mut csv = String::from("sample_id,x,y\n");
    let mut audits = Vec::new();
    for curve in &ingested.curves {
        match extract_landmarks(&curve.polyline, opts) {
            Ok((_, l)) => {
                for p in l.configuration.to_landmarks() {
                    csv.push_str(&format!("{},{:.16e},{:.16e}\n", curve.id, p[0], p[1]));
                }
                audits.push(LandmarkAudit::new(curve.id.clone(), &l));
            }
            Err(e) => eprintln!("warning: curve {}: {e}; skipped", curve.id),
        }
    }
    if audits.is_empty() && !ingested.curves.is_empty() {
        return Err(CliError::Data(format!("{}: no curve yielded landmarks", path.display())));
    }
    emit(output, &csv)?;
    if let Some(a) = audit {
        emit(Some(a), &to_json(&audits))?;
    }
    Ok(())
}

fn cmd_hopf(path: &Path, kind: ShapeSpaceKind, output: Option<&Path>) -> CliResult<()> {
    let samples = preshapes(path)?;
    if samples[0].dim() != 2 || samples[0].landmarks() != 3 {
        return Err(CliError::Data(format!(
            "{}: the Hopf chart needs planar triangles, got m = {}, k = {}",
            path.display(),
            samples[0].dim(),
            samples[0].landmarks()
        )));
    }
    let mut csv = String::from("sample_id,x,y,z\n");
    for (i, p) in samples.iter().enumerate() {
        let v = hopf_fold(hopf_of_preshape(p)?, kind);
        csv.push_str(&format!("{i},{:.16e},{:.16e},{:.16e}\n", v[0], v[1], v[2]));
    }
    emit(output, &csv)
}
