//! The `floquet` command line: loads operator and perturbation specs,
//! runs one computation and writes JSON or CSV.

mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use floquet_core::discretize::{hunt_eigenvalues, HuntOptions, Window};
use floquet_core::expr::Expr;
use floquet_core::floquet::{
    classify_multiplicators, halfline_invertibility, max_unimodular_jordan_order, wholeline_spectrum_membership,
    HalflineVerdict, MultiplicatorSet, DEFAULT_EPSILON_CIRCLE,
};
use floquet_core::hill::{band_structure, classify_hill_point, Band, Edge, HillPoint, HillSpec, DEFAULT_EDGE_BAND_EPS};
use floquet_core::io::{load_operator, load_perturbation};
use floquet_core::periodic_ode::{monodromy, IntegratorStats, OperatorSpec, DEFAULT_TOL};
use floquet_core::perturbation::{certify_absence, CheckOptions};
use floquet_core::resolvent::{apply_resolvent, truncated_residual_profile, weighted_r_bound_check, Norm, RBoundOptions, RGrid, RhsFunction};
use floquet_core::{CMatrix, Error, Warning, C64};
use serde::Serialize;

pub use output::round_json;

/// Exit code for invalid input.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 2;

const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Parser)]
#[command(name = "floquet", version, about = "Floquet analysis of periodic ODE operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monodromy matrix, multiplicators and their classification at λ.
    Monodromy(MonodromyArgs),
    /// Hill discriminant scan, band edges and bands.
    Bands(BandsArgs),
    /// Spectral class and maximal unimodular Jordan order l at λ.
    Classify(ClassifyArgs),
    /// Half-line resolvent applied to a compactly supported right-hand side.
    Resolve(ResolveArgs),
    /// Absence certificate for an eigenvalue of the perturbed operator.
    Certify(CertifyArgs),
    /// Eigenvalue hunt on truncated domains (empirical corroboration).
    Hunt(HuntArgs),
    /// Sampled weighted bound for R(λ)u(t) = ∫_t^∞ e^{λ(t−s)} u(s) ds.
    Rcheck(RcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PNorm {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "inf")]
    Inf,
}

impl From<PNorm> for Norm {
    fn from(p: PNorm) -> Self {
        match p {
            PNorm::One => Norm::L1,
            PNorm::Two => Norm::L2,
            PNorm::Inf => Norm::LInf,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Seed for every randomized check.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
    /// Integrator tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Debug, Args)]
struct MonodromyArgs {
    /// Operator spec file.
    #[arg(long)]
    op: PathBuf,
    /// Spectral parameter as `re,im`; a bare real is accepted.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    lambda: C64,
    /// Multiplicators within this distance of the unit circle count as on it.
    #[arg(long, default_value_t = DEFAULT_EPSILON_CIRCLE)]
    epsilon_circle: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BandsArgs {
    /// Operator spec file.
    #[arg(long)]
    op: PathBuf,
    /// Lower end of the scanned λ range.
    #[arg(long, allow_hyphen_values = true)]
    min: f64,
    /// Upper end of the scanned λ range.
    #[arg(long, allow_hyphen_values = true)]
    max: f64,
    /// Number of scan cells.
    #[arg(long, default_value_t = 512)]
    res: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Operator spec file.
    #[arg(long)]
    op: PathBuf,
    /// Spectral parameter as `re,im`; a bare real is accepted.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    lambda: C64,
    /// Multiplicators within this distance of the unit circle count as on it.
    #[arg(long, default_value_t = DEFAULT_EPSILON_CIRCLE)]
    epsilon_circle: f64,
    #[arg(long, default_value_t = DEFAULT_EDGE_BAND_EPS)]
    edge_band_eps: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ResolveArgs {
    /// Operator spec file.
    #[arg(long)]
    op: PathBuf,
    /// Spectral parameter as `re,im`; a bare real is accepted.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    lambda: C64,
    /// Smooth bump right-hand side on `[a, b]`.
    #[arg(long, value_parser = parse_pair, conflicts_with = "rhs")]
    rhs_bump: Option<(f64, f64)>,
    /// Right-hand side expression in `t`; needs `--support`.
    #[arg(long, requires = "support")]
    rhs: Option<String>,
    /// The right-hand side is set to zero beyond this point.
    #[arg(long)]
    support: Option<f64>,
    /// Sampled interval `[0, length]`; defaults to the support plus two
    /// periods, rounded up to the grid.
    #[arg(long)]
    length: Option<f64>,
    /// Grid step; must divide the period.
    #[arg(long, default_value_t = 1.0 / 256.0)]
    step: f64,
    /// Norm of the reported solution and right-hand side.
    #[arg(long, value_enum, default_value = "2")]
    norm: PNorm,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    /// Operator spec file.
    #[arg(long)]
    op: PathBuf,
    /// Perturbation spec file.
    #[arg(long)]
    pert: PathBuf,
    /// Spectral parameter as `re,im`; a bare real is accepted.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    lambda: C64,
    /// Decay checks sample `[0, t_max]`.
    #[arg(long, default_value_t = CheckOptions::default().t_max)]
    t_max: f64,
    /// Samples per decay check.
    #[arg(long, default_value_t = CheckOptions::default().samples)]
    samples: usize,
    /// Largest accepted trend of the log block suprema of `(1+t)^δ|b_j(t)|`.
    #[arg(long, default_value_t = CheckOptions::default().slope_tol)]
    slope_tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct HuntArgs {
    /// Operator spec file.
    #[arg(long)]
    op: PathBuf,
    /// Perturbation spec file.
    #[arg(long)]
    pert: PathBuf,
    /// Search window `re_min,re_max,im_min,im_max`.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_window)]
    window: Window,
    /// Domain lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [20.0, 40.0, 80.0])]
    lengths: Vec<f64>,
    /// Grid step; at most a 32nd of the period.
    #[arg(long, default_value_t = HuntOptions::default().step)]
    step: f64,
    /// Largest boundary mass of a genuine eigenvector.
    #[arg(long, default_value_t = HuntOptions::default().loc_tol)]
    loc_tol: f64,
    /// Largest drift of a genuine eigenvalue across domain lengths.
    #[arg(long, default_value_t = HuntOptions::default().drift_tol)]
    drift_tol: f64,
    /// Largest number of grid unknowns per domain.
    #[arg(long, default_value_t = HuntOptions::default().unknown_cap)]
    cap: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct RcheckArgs {
    /// Spectral parameter as `re,im`; a bare real is accepted.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
    lambda: C64,
    /// Weight exponent τ.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Number of random test functions.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Norm in which the bound is checked.
    #[arg(long, value_enum, default_value = "2")]
    norm: PNorm,
    /// Weight the input by `(1+s)^{−τ−1}` with bound 2.
    #[arg(long)]
    shifted: bool,
    #[command(flatten)]
    common: Common,
}

fn parse_complex(s: &str) -> Result<C64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
    match parts.as_slice() {
        [re] => Ok(C64::new(num(re)?, 0.0)),
        [re, im] => Ok(C64::new(num(re)?, num(im)?)),
        _ => Err(format!("expected `re,im`, got `{s}`")),
    }
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let z = parse_complex(s)?;
    Ok((z.re, z.im))
}

fn parse_window(s: &str) -> Result<Window, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        &[re_min, re_max, im_min, im_max] => Ok(Window { re_min, re_max, im_min, im_max }),
        _ => Err(format!("expected `re_min,re_max,im_min,im_max`, got `{s}`")),
    }
}

/// A failed run: exit code and the JSON error object.
#[derive(Debug)]
struct Failure {
    code: i32,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_validation() { EXIT_VALIDATION } else { EXIT_NUMERICAL },
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

fn validation(kind: &str, message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        kind: kind.into(),
        message: message.into(),
    }
}

/// Result of a subcommand, ready to be written.
enum Rendered {
    Json(serde_json::Value),
    Csv(Vec<String>, Vec<Vec<f64>>),
}

fn json<T: Serialize>(value: &T) -> Result<Rendered, Failure> {
    serde_json::to_value(value)
        .map(Rendered::Json)
        .map_err(|e| Failure { code: EXIT_NUMERICAL, kind: "serialization".into(), message: e.to_string() })
}

fn csv_unsupported(command: &str) -> Failure {
    validation("invalid_input", format!("`{command}` produces JSON only"))
}

#[derive(Serialize)]
struct MonodromyReport {
    #[serde(serialize_with = "output::complex")]
    lambda: C64,
    period: f64,
    monodromy: CMatrix,
    multiplicators: MultiplicatorSet,
    l: usize,
    halfline: HalflineVerdict,
    wholeline_spectrum: bool,
    liouville_defect: f64,
    integrator: IntegratorStats,
}

fn run_monodromy(a: &MonodromyArgs) -> Result<Rendered, Failure> {
    let op = load_operator(&a.op)?;
    let m = monodromy(&op, a.lambda, a.common.tol).map_err(Error::from)?;
    let ms = classify_multiplicators(&m.monodromy, a.epsilon_circle).map_err(Error::from)?;
    let l = max_unimodular_jordan_order(&m.monodromy, a.epsilon_circle).map_err(Error::from)?;
    if a.common.format == Format::Csv {
        let n = m.monodromy.rows();
        let rows = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| vec![i as f64, j as f64, m.monodromy[(i, j)].re, m.monodromy[(i, j)].im])
            .collect();
        return Ok(Rendered::Csv(vec!["row".into(), "col".into(), "re".into(), "im".into()], rows));
    }
    json(&MonodromyReport {
        lambda: a.lambda,
        period: op.period(),
        l,
        halfline: halfline_invertibility(&ms),
        wholeline_spectrum: wholeline_spectrum_membership(&ms),
        liouville_defect: m.liouville_defect(),
        integrator: m.stats,
        multiplicators: ms,
        monodromy: m.monodromy,
    })
}

fn hill_of(op: OperatorSpec) -> Result<HillSpec, Failure> {
    Ok(HillSpec::from_operator(op)?)
}

#[derive(Serialize)]
struct BandsReport {
    lambda_min: f64,
    lambda_max: f64,
    resolution: usize,
    bands: Vec<Band>,
    edges: Vec<Edge>,
    warnings: Vec<Warning>,
}

fn run_bands(a: &BandsArgs) -> Result<Rendered, Failure> {
    let hill = hill_of(load_operator(&a.op)?)?;
    let bs = band_structure(&hill, a.min, a.max, a.res, a.common.tol)?;
    if a.common.format == Format::Csv {
        let rows = bs.samples.iter().map(|&(l, d)| vec![l, d]).collect();
        return Ok(Rendered::Csv(vec!["lambda".into(), "discriminant".into()], rows));
    }
    json(&BandsReport {
        lambda_min: bs.lambda_min,
        lambda_max: bs.lambda_max,
        resolution: bs.resolution,
        bands: bs.bands,
        edges: bs.edges,
        warnings: bs.warnings,
    })
}

#[derive(Serialize)]
struct ClassifyReport {
    #[serde(serialize_with = "output::complex")]
    lambda: C64,
    l: usize,
    halfline: HalflineVerdict,
    wholeline_spectrum: bool,
    multiplicators: MultiplicatorSet,
    /// Present for Hill operators at real λ.
    hill: Option<HillPoint>,
}

fn run_classify(a: &ClassifyArgs) -> Result<Rendered, Failure> {
    if a.common.format == Format::Csv {
        return Err(csv_unsupported("classify"));
    }
    let op = load_operator(&a.op)?;
    let u = monodromy(&op, a.lambda, a.common.tol).map_err(Error::from)?.monodromy;
    let ms = classify_multiplicators(&u, a.epsilon_circle).map_err(Error::from)?;
    let l = max_unimodular_jordan_order(&u, a.epsilon_circle).map_err(Error::from)?;
    let hill = match (a.lambda.im == 0.0, HillSpec::from_operator(op.clone())) {
        (true, Ok(spec)) => Some(classify_hill_point(&spec, a.lambda.re, a.common.tol, a.edge_band_eps)?),
        _ => None,
    };
    json(&ClassifyReport {
        lambda: a.lambda,
        l,
        halfline: halfline_invertibility(&ms),
        wholeline_spectrum: wholeline_spectrum_membership(&ms),
        multiplicators: ms,
        hill,
    })
}

#[derive(Serialize)]
struct ResolveReport {
    #[serde(serialize_with = "output::complex")]
    lambda: C64,
    step: f64,
    length: f64,
    support: f64,
    norm: Norm,
    solution_norm: f64,
    rhs_norm: f64,
    residual: f64,
    threshold: f64,
    multiplicators: MultiplicatorSet,
}

fn run_resolve(a: &ResolveArgs) -> Result<Rendered, Failure> {
    let op = load_operator(&a.op)?;
    let support = match (&a.rhs_bump, &a.rhs, a.support) {
        (Some((_, b)), None, _) => *b,
        (None, Some(_), Some(s)) => s,
        _ => return Err(validation("invalid_input", "give either --rhs-bump a,b or --rhs EXPR --support S")),
    };
    let length = a
        .length
        .unwrap_or(((support + 2.0 * op.period()) / a.step - 1e-9).ceil() * a.step);
    let nu = match (&a.rhs_bump, &a.rhs) {
        (Some((lo, hi)), _) => RhsFunction::bump(*lo, *hi, length, a.step)?,
        (_, Some(src)) => RhsFunction::from_expr(&Expr::parse(src).map_err(Error::from)?, length, a.step, support)?,
        _ => unreachable!("checked above"),
    };
    let sol = apply_resolvent(&op, a.lambda, &nu, a.common.tol)?;
    if a.common.format == Format::Csv {
        let profile = truncated_residual_profile(&op, a.lambda, &sol.u, &nu)?;
        let rows = sol
            .u
            .values
            .iter()
            .zip(profile)
            .enumerate()
            .map(|(i, (u, r))| vec![sol.u.t(i), u.re, u.im, r.map_or(f64::NAN, |z| z.norm())])
            .collect();
        return Ok(Rendered::Csv(
            vec!["t".into(), "re_u".into(), "im_u".into(), "residual".into()],
            rows,
        ));
    }
    let norm = Norm::from(a.norm);
    json(&ResolveReport {
        lambda: a.lambda,
        step: a.step,
        length,
        support,
        norm,
        solution_norm: norm.of(&sol.u.values, a.step),
        rhs_norm: norm.of(&nu.samples.values, a.step),
        residual: sol.residual,
        threshold: sol.threshold,
        multiplicators: sol.multiplicators,
    })
}

fn run_certify(a: &CertifyArgs) -> Result<Rendered, Failure> {
    if a.common.format == Format::Csv {
        return Err(csv_unsupported("certify"));
    }
    let op = load_operator(&a.op)?;
    let pert = load_perturbation(&a.pert)?;
    let opts = CheckOptions {
        t_max: a.t_max,
        samples: a.samples,
        slope_tol: a.slope_tol,
        ..CheckOptions::default()
    };
    json(&certify_absence(&op, &pert, a.lambda, a.common.tol, opts)?)
}

fn run_hunt(a: &HuntArgs) -> Result<Rendered, Failure> {
    let op = load_operator(&a.op)?;
    let pert = load_perturbation(&a.pert)?;
    let csv = a.common.format == Format::Csv;
    let opts = HuntOptions {
        step: a.step,
        loc_tol: a.loc_tol,
        drift_tol: a.drift_tol,
        unknown_cap: a.cap,
        keep_profiles: csv,
    };
    let report = hunt_eigenvalues(&op, &pert, a.window, &a.lengths, opts)?;
    if csv {
        let mut rows = Vec::new();
        for (k, cand) in report.candidates.iter().enumerate() {
            for &(t, v) in cand.profile.iter().flatten() {
                rows.push(vec![k as f64, cand.found_at, t, v.re, v.im]);
            }
        }
        return Ok(Rendered::Csv(
            vec!["candidate".into(), "length".into(), "t".into(), "re_v".into(), "im_v".into()],
            rows,
        ));
    }
    json(&report)
}

fn run_rcheck(a: &RcheckArgs) -> Result<Rendered, Failure> {
    if a.common.format == Format::Csv {
        return Err(csv_unsupported("rcheck"));
    }
    let opts = RBoundOptions {
        norm: a.norm.into(),
        shifted: a.shifted,
        seed: a.common.seed,
    };
    json(&weighted_r_bound_check(a.lambda, a.tau, RGrid::default(), a.trials, opts)?)
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Monodromy(a) => &a.common,
            Command::Bands(a) => &a.common,
            Command::Classify(a) => &a.common,
            Command::Resolve(a) => &a.common,
            Command::Certify(a) => &a.common,
            Command::Hunt(a) => &a.common,
            Command::Rcheck(a) => &a.common,
        }
    }

    fn execute(&self) -> Result<Rendered, Failure> {
        match self {
            Command::Monodromy(a) => run_monodromy(a),
            Command::Bands(a) => run_bands(a),
            Command::Classify(a) => run_classify(a),
            Command::Resolve(a) => run_resolve(a),
            Command::Certify(a) => run_certify(a),
            Command::Hunt(a) => run_hunt(a),
            Command::Rcheck(a) => run_rcheck(a),
        }
    }
}

fn write_error(stderr: &mut dyn Write, f: &Failure) {
    let body = serde_json::json!({ "error": { "kind": f.kind, "message": f.message, "exit_code": f.code } });
    let _ = writeln!(stderr, "{body}");
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            write_error(stderr, &validation("usage", e.to_string().trim_end()));
            return EXIT_VALIDATION;
        }
    };
    let common = cli.command.common();
    if let Some(n) = common.threads {
        if n == 0 {
            write_error(stderr, &validation("usage", "--threads must be positive"));
            return EXIT_VALIDATION;
        }
        // Fails only if a pool already exists, e.g. on repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let rendered = match cli.command.execute() {
        Ok(r) => r,
        Err(f) => {
            write_error(stderr, &f);
            return f.code;
        }
    };
    let text = match rendered {
        Rendered::Json(v) => output::to_json_text(&round_json(v)),
        Rendered::Csv(header, rows) => match output::to_csv_text(&header, &rows) {
            Ok(t) => t,
            Err(e) => {
                write_error(stderr, &Failure { code: EXIT_NUMERICAL, kind: "serialization".into(), message: e });
                return EXIT_NUMERICAL;
            }
        },
    };
    let written = match &common.out {
        Some(path) => std::fs::write(path, text.as_bytes()).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(message) = written {
        write_error(stderr, &validation("io", message));
        return EXIT_VALIDATION;
    }
    0
}
