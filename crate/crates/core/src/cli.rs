//! Command-line front end. Exit codes: 0 success, 1 numerical failure,
//! 2 usage or input error, 3 non-convergence, 4 Monte Carlo tolerance breach.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::asymptotics::{
    biweight_scalars, cutoff_for_breakdown, limit_covariances, sigma12, AsymptoticScalars,
};
use crate::error::Error;
use crate::estimators::{fit, Dataset, FitOptions};
use crate::foundations::SymMatrix;
use crate::influence::{
    ges_argmin, ges_indices, if_homogeneous, if_structured, tradeoff_curve, GesIndex,
    HomogeneousTarget, InfluenceWeights, TradeoffRow,
};
use crate::simulate::{estimator_limit_experiment, gaussian_designs, radial_projection_experiment};
use crate::spherical::SphericalLaw;
use crate::structure::{LinearStructure, StructureSpec, ThetaVector};
use crate::weights::{Biweight, Family, RhoFunction, WeightTriple};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_TOLERANCE: i32 = 4;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "STRUCTCOV_THREADS";

const TABLE_DIMS: [usize; 4] = [1, 2, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "structcov",
    version,
    about = "Limit theory and robust fitting for structured covariance estimators"
)]
pub struct Cli {
    /// Output format: 3-decimal CSV or full-precision JSON.
    #[arg(long, value_enum, default_value = "csv", global = true)]
    pub format: Format,
    /// Do not echo the resolved invocation to stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Worker threads (defaults to $STRUCTCOV_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "verb", rename_all = "kebab-case")]
pub enum Command {
    /// Biweight cutoff constants for given breakdown points.
    Cutoff(CutoffArgs),
    /// Limiting-variance scalars for one estimator.
    Scalars(ScalarsArgs),
    /// Efficiencies and GES indices along a breakdown grid.
    Tradeoff(TradeoffArgs),
    /// GES indices, or influence functions at a point.
    Influence(InfluenceArgs),
    /// Fit a structured covariance model to data.
    Fit(FitArgs),
    /// Monte Carlo checks of the limiting covariances.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CutoffArgs {
    /// Dimensions k.
    #[arg(long, value_delimiter = ',', default_values_t = TABLE_DIMS)]
    pub dim: Vec<usize>,
    /// Breakdown points in (0, 0.5].
    #[arg(long, value_delimiter = ',', default_values_t = default_breakdowns())]
    pub breakdown: Vec<f64>,
}

fn default_breakdowns() -> Vec<f64> {
    (1..=10).map(|i| round12(0.05 * i as f64)).collect()
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Tuning {
    /// Biweight cutoff c.
    #[arg(long, conflicts_with = "breakdown")]
    pub cutoff: Option<f64>,
    /// Breakdown point; resolved to a cutoff.
    #[arg(long)]
    pub breakdown: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScalarsArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value = "s-rho")]
    pub family: String,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args, Serialize)]
pub struct TradeoffArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 5, 10])]
    pub dim: Vec<usize>,
    /// Breakdown grid `start:stop:step`.
    #[arg(long, default_value = "0.05:0.5:0.01")]
    pub grid: String,
    /// Write the curve to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON path (default: next to --out).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct InfluenceArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value = "s-rho")]
    pub family: String,
    #[command(flatten)]
    pub tuning: Tuning,
    /// Contamination point y; without it the GES indices are printed.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub point: Option<Vec<f64>>,
    /// Location mu (default 0).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    /// Structure: a JSON spec file or `name:k` (unstructured, compound-symmetry, diagonal).
    #[arg(long)]
    pub structure: Option<String>,
    /// theta0 (default: coordinates of the identity).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// CSV or JSON data file.
    #[arg(long)]
    pub data: PathBuf,
    /// Structure: a JSON spec file or `name:k`.
    #[arg(long)]
    pub structure: String,
    #[arg(long, default_value = "gaussian-ml")]
    pub family: String,
    #[command(flatten)]
    pub tuning: Tuning,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Radial,
    Limit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Theta,
    Shape,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, default_value = "compound-symmetry:3")]
    pub structure: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = vec![1.0, 0.5])]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Replicates (default 100000 radial, 2000 limit).
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Relative Frobenius tolerance (default 0.05 radial, 0.10 limit).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Radial law: sigma1.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub sigma1: f64,
    /// Radial law: sigma2.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub sigma2: f64,
    /// Limit experiment: estimator family.
    #[arg(long, default_value = "gaussian-ml")]
    pub family: String,
    #[command(flatten)]
    pub tuning: Tuning,
    /// Limit experiment: sample size.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Limit experiment: beta0 (its length sets q).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = vec![1.0, -1.0])]
    pub beta: Vec<f64>,
    /// Limit experiment: location model X_i = I_k (beta0 = 0 unless given with length k).
    #[arg(long)]
    pub location: bool,
    /// Limit experiment: statistic compared against the tolerance.
    #[arg(long, value_enum, default_value = "theta")]
    pub metric: Metric,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_)
            | Error::InvalidSpec(_)
            | Error::InvalidParameters(_)
            | Error::Data { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::MissingConstant
            | Error::StructuralRank { .. } => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        let _ = writeln!(err, "error: {}", e.message);
        return e.code;
    }
    if !cli.quiet {
        let echo = serde_json::to_string(&cli).unwrap_or_default();
        let _ = writeln!(err, "structcov invocation: {echo}");
    }
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| usage(format!("{THREADS_ENV} must be a positive integer")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(usage("thread count must be positive"));
        }
        // a second configuration in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<i32> {
    let fmt = cli.format;
    match &cli.command {
        Command::Cutoff(a) => run_cutoff(a, fmt, out),
        Command::Scalars(a) => run_scalars(a, fmt, out),
        Command::Tradeoff(a) => run_tradeoff(a, fmt, out),
        Command::Influence(a) => run_influence(a, fmt, out),
        Command::Fit(a) => run_fit(a, fmt, out),
        Command::Simulate(a) => run_simulate(a, fmt, out),
    }
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn write_csv(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::from(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(out: &mut dyn Write, schema: &str, mut body: Value) -> CliResult<()> {
    if let Value::Object(map) = &mut body {
        map.insert("schema_id".into(), Value::String(schema.into()));
    }
    serde_json::to_writer_pretty(&mut *out, &body).map_err(Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn check_dim(k: usize) -> CliResult<()> {
    if k == 0 {
        return Err(usage("--dim must be >= 1"));
    }
    Ok(())
}

fn resolve_cutoff(k: usize, t: &Tuning) -> CliResult<f64> {
    match (t.cutoff, t.breakdown) {
        (Some(c), _) => {
            if !(c > 0.0) {
                return Err(usage("--cutoff must be positive"));
            }
            Ok(c)
        }
        (None, Some(e)) => Ok(cutoff_for_breakdown(k, e)?),
        (None, None) => Err(usage("s-rho needs --cutoff or --breakdown")),
    }
}

fn parse_family(s: &str) -> CliResult<Family> {
    let f: Family = s.parse()?;
    if f == Family::MEstimator {
        return Err(usage(
            "m-estimator weights are user callables; use the library API",
        ));
    }
    Ok(f)
}

/// Loads a structure from a JSON spec file or parses `name:k`.
pub fn load_structure(s: &str) -> CliResult<LinearStructure> {
    let p = Path::new(s);
    if p.is_file() {
        let text = std::fs::read_to_string(p)?;
        return Ok(LinearStructure::from_spec(&StructureSpec::from_json(
            &text,
        )?)?);
    }
    let (name, k) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("'{s}' is neither a spec file nor name:k")))?;
    let k: usize = k
        .parse()
        .map_err(|_| usage(format!("bad dimension in '{s}'")))?;
    Ok(match name {
        "unstructured" => LinearStructure::unstructured(k)?,
        "compound-symmetry" => LinearStructure::compound_symmetry(k)?,
        "diagonal" => LinearStructure::diagonal(k)?,
        other => return Err(usage(format!("unknown structure '{other}'"))),
    })
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("grid '{s}' must be start:stop:step")))?;
    let [start, stop, step] = parts[..] else {
        return Err(usage(format!("grid '{s}' must be start:stop:step")));
    };
    if !(step > 0.0) || !(start > 0.0) || !(stop <= 0.5) || stop < start {
        return Err(usage(format!(
            "grid '{s}' must satisfy 0 < start <= stop <= 0.5 and step > 0"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|i| round12(start + step * i as f64))
        .collect())
}

fn run_cutoff(a: &CutoffArgs, fmt: Format, out: &mut dyn Write) -> CliResult<i32> {
    for &k in &a.dim {
        check_dim(k)?;
    }
    for &e in &a.breakdown {
        if !(e > 0.0 && e <= 0.5) {
            return Err(usage(format!("breakdown {e} outside (0, 0.5]")));
        }
    }
    let pairs: Vec<(usize, f64)> = a
        .dim
        .iter()
        .flat_map(|&k| a.breakdown.iter().map(move |&e| (k, e)))
        .collect();
    let cs: Vec<f64> = pairs
        .par_iter()
        .map(|&(k, e)| cutoff_for_breakdown(k, e))
        .collect::<crate::Result<_>>()?;
    match fmt {
        Format::Csv => {
            let rows: Vec<Vec<String>> = pairs
                .iter()
                .zip(&cs)
                .map(|(&(k, e), &c)| vec![k.to_string(), format!("{e:.2}"), f3(c)])
                .collect();
            write_csv(out, &["k", "breakdown", "c"], &rows)?;
        }
        Format::Json => {
            let rows: Vec<Value> = pairs
                .iter()
                .zip(&cs)
                .map(|(&(k, e), &c)| json!({"k": k, "breakdown": e, "c": c}))
                .collect();
            write_json(out, "structcov.cutoff.v1", json!({ "rows": rows }))?;
        }
    }
    Ok(EXIT_OK)
}

fn scalars_for(k: usize, family: Family, tuning: &Tuning) -> CliResult<AsymptoticScalars> {
    Ok(match family {
        Family::GaussianMl => AsymptoticScalars::gaussian_ml(k)?,
        _ => biweight_scalars(k, resolve_cutoff(k, tuning)?)?,
    })
}

fn run_scalars(a: &ScalarsArgs, fmt: Format, out: &mut dyn Write) -> CliResult<i32> {
    check_dim(a.dim)?;
    let family = parse_family(&a.family)?;
    let s = scalars_for(a.dim, family, &a.tuning)?;
    match fmt {
        Format::Csv => {
            let header = [
                "family",
                "k",
                "c",
                "b0",
                "sigma1",
                "sigma2",
                "sigma3",
                "lambda",
                "alpha",
                "gamma1",
                "gamma2",
                "delta1",
                "delta2",
                "are_regression",
                "are_shape_direction",
                "are_scale",
            ];
            let row = vec![
                s.family.to_string(),
                s.k.to_string(),
                s.cutoff.map(f3).unwrap_or_default(),
                f3(s.b0),
                f3(s.sigma1),
                f3(s.sigma2),
                f3(s.sigma3),
                f3(s.lambda),
                f3(s.alpha),
                f3(s.gamma1),
                f3(s.gamma2),
                f3(s.delta1),
                f3(s.delta2),
                f3(s.are_regression()),
                f3(s.are_shape_direction()),
                f3(s.are_scale()),
            ];
            write_csv(out, &header, &[row])?;
        }
        Format::Json => {
            let mut body = serde_json::to_value(&s).map_err(Error::from)?;
            body["are_regression"] = json!(s.are_regression());
            body["are_shape_direction"] = json!(s.are_shape_direction());
            body["are_scale"] = json!(s.are_scale());
            write_json(out, "structcov.scalars.v1", body)?;
        }
    }
    Ok(EXIT_OK)
}

const TRADEOFF_HEADER: [&str; 9] = [
    "k",
    "breakdown",
    "c",
    "are_regression",
    "are_shape_direction",
    "are_scale",
    "g1",
    "g2",
    "g3",
];

fn tradeoff_csv_row(r: &TradeoffRow) -> Vec<String> {
    vec![
        r.k.to_string(),
        format!("{:.4}", r.breakdown),
        f3(r.c),
        f3(r.are_regression),
        f3(r.are_shape_direction),
        f3(r.are_scale),
        f3(r.g1),
        f3(r.g2),
        f3(r.g3),
    ]
}

/// Argmins of G1, G2, G3 for every dimension on the curve.
pub fn tradeoff_summary(dims: &[usize], rows: &[TradeoffRow]) -> crate::Result<Value> {
    let jobs: Vec<(usize, GesIndex)> = dims
        .iter()
        .flat_map(|&k| [GesIndex::G1, GesIndex::G2, GesIndex::G3].map(|g| (k, g)))
        .collect();
    let found = jobs
        .par_iter()
        .map(|&(k, g)| ges_argmin(k, rows, g))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(json!({ "argmin": found }))
}

fn run_tradeoff(a: &TradeoffArgs, fmt: Format, out: &mut dyn Write) -> CliResult<i32> {
    for &k in &a.dim {
        check_dim(k)?;
    }
    let grid = parse_grid(&a.grid)?;
    let rows = tradeoff_curve(&a.dim, &grid)?;
    let summary = tradeoff_summary(&a.dim, &rows)?;
    let csv_rows: Vec<Vec<String>> = rows.iter().map(tradeoff_csv_row).collect();

    if let Some(path) = &a.out {
        let mut f = std::fs::File::create(path)?;
        write_csv(&mut f, &TRADEOFF_HEADER, &csv_rows)?;
        let spath = a
            .summary
            .clone()
            .unwrap_or_else(|| path.with_extension("summary.json"));
        let mut sf = std::fs::File::create(spath)?;
        write_json(&mut sf, "structcov.tradeoff-summary.v1", summary.clone())?;
    } else if let Some(spath) = &a.summary {
        let mut sf = std::fs::File::create(spath)?;
        write_json(&mut sf, "structcov.tradeoff-summary.v1", summary.clone())?;
    }

    match fmt {
        Format::Csv if a.out.is_some() => {
            let found: Vec<crate::influence::GesArgmin> =
                serde_json::from_value(summary["argmin"].clone()).map_err(Error::from)?;
            let rows: Vec<Vec<String>> = found
                .iter()
                .map(|m| {
                    let mut r = vec![format!("{:?}", m.index).to_lowercase()];
                    r.extend(tradeoff_csv_row(&m.row));
                    r
                })
                .collect();
            let mut header = vec!["index"];
            header.extend(TRADEOFF_HEADER);
            write_csv(out, &header, &rows)?;
        }
        Format::Csv => write_csv(out, &TRADEOFF_HEADER, &csv_rows)?,
        Format::Json => {
            let mut body = summary;
            body["rows"] = serde_json::to_value(&rows).map_err(Error::from)?;
            write_json(out, "structcov.tradeoff.v1", body)?;
        }
    }
    Ok(EXIT_OK)
}

fn influence_weights(k: usize, family: Family, tuning: &Tuning) -> CliResult<InfluenceWeights> {
    Ok(match family {
        Family::GaussianMl => InfluenceWeights::gaussian_ml(k),
        _ => {
            let c = resolve_cutoff(k, tuning)?;
            let law = SphericalLaw::gaussian(k)?;
            let rho: Arc<dyn RhoFunction> = Arc::new(Biweight::new(c)?);
            let b0 = crate::asymptotics::consistency_constant(rho.as_ref(), &law)?;
            InfluenceWeights::s_rho(rho, &law, b0)?
        }
    })
}

fn run_influence(a: &InfluenceArgs, fmt: Format, out: &mut dyn Write) -> CliResult<i32> {
    check_dim(a.dim)?;
    let k = a.dim;
    let family = parse_family(&a.family)?;
    let Some(point) = &a.point else {
        if family != Family::SRho {
            return Err(usage("GES indices are defined for the s-rho family"));
        }
        let g = ges_indices(k, resolve_cutoff(k, &a.tuning)?)?;
        match fmt {
            Format::Csv => write_csv(
                out,
                &["k", "c", "g1", "g2", "g3"],
                &[vec![k.to_string(), f3(g.c), f3(g.g1), f3(g.g2), f3(g.g3)]],
            )?,
            Format::Json => write_json(
                out,
                "structcov.ges.v1",
                serde_json::to_value(g).map_err(Error::from)?,
            )?,
        }
        return Ok(EXIT_OK);
    };
    let structure = load_structure(
        a.structure
            .as_deref()
            .unwrap_or(&format!("unstructured:{k}")),
    )?;
    if structure.dim() != k || point.len() != k {
        return Err(usage("--point and --structure must have dimension --dim"));
    }
    let theta = match &a.theta {
        Some(t) => ThetaVector::new(t),
        None => structure.coordinates(&SymMatrix::identity(k))?,
    };
    if theta.len() != structure.nparams() {
        return Err(usage(format!(
            "--theta needs {} values",
            structure.nparams()
        )));
    }
    let mu = match &a.mu {
        Some(m) if m.len() == k => DVector::from_column_slice(m),
        Some(_) => return Err(usage("--mu must have dimension --dim")),
        None => DVector::zeros(k),
    };
    let y = DVector::from_column_slice(point);
    let w = influence_weights(k, family, &a.tuning)?;
    let base = if_structured(&y, &mu, &structure, &theta, &w)?;
    let targets = [
        ("shape", HomogeneousTarget::Shape),
        ("direction", HomogeneousTarget::Direction),
        ("direction-det", HomogeneousTarget::DirectionDet),
        ("scale", HomogeneousTarget::Scale),
    ];
    let mut parts: Vec<(&str, Vec<f64>)> = vec![
        ("theta", base.if_theta.iter().cloned().collect()),
        ("vec-m", base.if_vec_m.iter().cloned().collect()),
    ];
    for (name, t) in targets {
        let v = if_homogeneous(&y, &mu, &structure, &theta, &w, t)?;
        parts.push((name, v.iter().cloned().collect()));
    }
    match fmt {
        Format::Csv => {
            let rows: Vec<Vec<String>> = parts
                .iter()
                .flat_map(|(name, v)| {
                    v.iter()
                        .enumerate()
                        .map(move |(i, x)| vec![name.to_string(), (i + 1).to_string(), f3(*x)])
                })
                .collect();
            write_csv(out, &["target", "component", "value"], &rows)?;
        }
        Format::Json => {
            let mut body = json!({
                "distance": base.distance,
                "alpha_c": w.alpha_c(base.distance),
                "beta_c": w.beta_c(base.distance),
                "gamma_c": w.gamma_c(base.distance),
            });
            for (name, v) in parts {
                body[name] = json!(v);
            }
            write_json(out, "structcov.influence.v1", body)?;
        }
    }
    Ok(EXIT_OK)
}

fn triple_for(k: usize, family: Family, tuning: &Tuning) -> CliResult<(WeightTriple, Option<f64>)> {
    Ok(match family {
        Family::GaussianMl => (WeightTriple::gaussian_ml(k), None),
        _ => {
            let c = resolve_cutoff(k, tuning)?;
            (crate::asymptotics::biweight_triple(k, c)?, Some(c))
        }
    })
}

fn run_fit(a: &FitArgs, fmt: Format, out: &mut dyn Write) -> CliResult<i32> {
    let data = Dataset::from_path(&a.data)?;
    let structure = load_structure(&a.structure)?;
    let k = data.dim();
    if structure.dim() != k {
        return Err(usage(format!(
            "structure has dimension {} but data have {k}",
            structure.dim()
        )));
    }
    let family = parse_family(&a.family)?;
    let (triple, cutoff) = triple_for(k, family, &a.tuning)?;
    let opts = FitOptions {
        max_iter: a.max_iter,
        tol: a.tol,
        ..FitOptions::default()
    };
    let res = fit(&data, &structure, &triple, &opts)?;
    let (s1, s2) = sigma12(&triple, &SphericalLaw::gaussian(k)?)?;
    let se: Vec<f64> = if res.pds_valid {
        let lc = limit_covariances(&structure, &res.theta_vector(), s1, s2)?;
        let n = data.len() as f64;
        lc.cov_theta
            .diagonal()
            .iter()
            .map(|v| (v / n).sqrt())
            .collect()
    } else {
        vec![f64::NAN; res.theta.len()]
    };
    match fmt {
        Format::Csv => {
            let mut rows = Vec::new();
            for (i, b) in res.beta.iter().enumerate() {
                rows.push(vec![format!("beta_{}", i + 1), f3(*b), String::new()]);
            }
            for (i, (t, s)) in res.theta.iter().zip(&se).enumerate() {
                rows.push(vec![format!("theta_{}", i + 1), f3(*t), f3(*s)]);
            }
            rows.push(vec![
                "iterations".into(),
                res.iterations.to_string(),
                String::new(),
            ]);
            rows.push(vec![
                "converged".into(),
                res.converged.to_string(),
                String::new(),
            ]);
            rows.push(vec![
                "pds_valid".into(),
                res.pds_valid.to_string(),
                String::new(),
            ]);
            write_csv(out, &["parameter", "estimate", "std_error"], &rows)?;
        }
        Format::Json => {
            let body = json!({
                "family": family.to_string(),
                "cutoff": cutoff,
                "structure": structure.name(),
                "n": data.len(),
                "sigma1": s1,
                "sigma2": s2,
                "theta_std_errors": se,
                "fit": res,
            });
            write_json(out, "structcov.fit.v1", body)?;
        }
    }
    Ok(if res.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn write_kv(
    out: &mut dyn Write,
    fmt: Format,
    schema: &str,
    body: Value,
    keys: &[&str],
) -> CliResult<()> {
    match fmt {
        Format::Csv => {
            let rows: Vec<Vec<String>> = keys
                .iter()
                .map(|&key| {
                    let v = &body[key];
                    let s = match v.as_f64() {
                        Some(x) if !v.is_u64() && !v.is_i64() => f3(x),
                        _ => v.to_string().trim_matches('"').to_string(),
                    };
                    vec![key.to_string(), s]
                })
                .collect();
            write_csv(out, &["field", "value"], &rows)
        }
        Format::Json => write_json(out, schema, body),
    }
}

fn run_simulate(a: &SimulateArgs, fmt: Format, out: &mut dyn Write) -> CliResult<i32> {
    let structure = load_structure(&a.structure)?;
    let theta = ThetaVector::new(&a.theta);
    if theta.len() != structure.nparams() {
        return Err(usage(format!(
            "--theta needs {} values",
            structure.nparams()
        )));
    }
    if !structure.is_valid(&theta) {
        return Err(usage("V(theta) is not positive definite"));
    }
    match a.experiment {
        Experiment::Radial => {
            let reps = a.replicates.unwrap_or(100_000);
            let tol = a.tolerance.unwrap_or(0.05);
            let rep = radial_projection_experiment(
                &structure, &theta, a.sigma1, a.sigma2, reps, a.seed, tol,
            )?;
            let body = serde_json::to_value(&rep).map_err(Error::from)?;
            write_kv(
                out,
                fmt,
                "structcov.simulate-radial.v1",
                body,
                &[
                    "structure",
                    "sigma1",
                    "sigma2",
                    "eta_hat",
                    "sigma1_hat",
                    "sigma2_hat",
                    "rel_err_theta",
                    "rel_err_vec_m",
                    "max_rel_err",
                    "tolerance",
                    "accepted",
                    "replicates",
                    "seed",
                ],
            )?;
            Ok(if rep.max_rel_err <= tol {
                EXIT_OK
            } else {
                EXIT_TOLERANCE
            })
        }
        Experiment::Limit => {
            let k = structure.dim();
            let reps = a.replicates.unwrap_or(2000);
            let tol = a.tolerance.unwrap_or(0.10);
            if a.n < 2 {
                return Err(usage("--n must be at least 2"));
            }
            let (designs, beta): (Vec<DMatrix<f64>>, DVector<f64>) = if a.location {
                let beta = if a.beta.len() == k {
                    DVector::from_column_slice(&a.beta)
                } else {
                    DVector::zeros(k)
                };
                (vec![DMatrix::identity(k, k); a.n], beta)
            } else {
                if a.beta.is_empty() {
                    return Err(usage("--beta must not be empty"));
                }
                (
                    gaussian_designs(a.n, k, a.beta.len(), a.seed),
                    DVector::from_column_slice(&a.beta),
                )
            };
            let family = parse_family(&a.family)?;
            let (triple, _) = triple_for(k, family, &a.tuning)?;
            let rep = estimator_limit_experiment(
                &structure,
                &theta,
                &beta,
                &designs,
                &triple,
                reps,
                a.seed,
                &FitOptions::default(),
            )?;
            let err = match a.metric {
                Metric::Theta => rep.rel_frobenius_err,
                Metric::Shape => rep.rel_frobenius_err_shape,
            };
            let mut body = serde_json::to_value(&rep).map_err(Error::from)?;
            body["tolerance"] = json!(tol);
            body["metric"] = json!(a.metric);
            write_kv(
                out,
                fmt,
                "structcov.simulate-limit.v1",
                body,
                &[
                    "structure",
                    "family",
                    "sigma1",
                    "sigma2",
                    "rel_frobenius_err",
                    "rel_frobenius_err_shape",
                    "shape_annihilation",
                    "metric",
                    "tolerance",
                    "n",
                    "replicates",
                    "failed",
                    "mean_iterations",
                    "seed",
                ],
            )?;
            Ok(if err <= tol { EXIT_OK } else { EXIT_TOLERANCE })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["structcov"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.05:0.5:0.05").unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[2], 0.15);
        assert_eq!(*g.last().unwrap(), 0.5);
        assert!(parse_grid("0.1:0.6:0.1").is_err());
        assert!(parse_grid("0:0.5:0.1").is_err());
        assert!(parse_grid("0.1:0.5").is_err());
        assert!(parse_grid("a:b:c").is_err());
    }

    #[test]
    fn structure_shorthand() {
        assert_eq!(load_structure("compound-symmetry:3").unwrap().nparams(), 2);
        assert_eq!(load_structure("unstructured:2").unwrap().nparams(), 3);
        assert!(load_structure("weird:2").is_err());
        assert!(load_structure("nonsense").is_err());
    }

    #[test]
    fn cutoff_verb() {
        let (code, out, err) = run_capture(&["cutoff", "--dim", "2", "--breakdown", "0.5"]);
        assert_eq!(code, 0);
        assert_eq!(out, "k,breakdown,c\n2,0.50,2.661\n");
        assert!(err.contains("invocation"));
        let (code, _, _) = run_capture(&["cutoff", "--dim", "1", "--breakdown", "0.6"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn quiet_suppresses_echo() {
        let (_, _, err) = run_capture(&["--quiet", "cutoff", "--dim", "2", "--breakdown", "0.5"]);
        assert!(err.is_empty());
    }

    #[test]
    fn json_output_has_schema() {
        let (code, out, _) = run_capture(&[
            "--format",
            "json",
            "scalars",
            "--dim",
            "2",
            "--breakdown",
            "0.5",
        ]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["schema_id"], "structcov.scalars.v1");
        assert!((v["are_regression"].as_f64().unwrap() - 0.58).abs() < 0.002);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_capture(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["scalars", "--dim", "2"]).0, EXIT_USAGE);
        assert_eq!(
            run_capture(&[
                "scalars",
                "--dim",
                "2",
                "--family",
                "m-estimator",
                "--cutoff",
                "2"
            ])
            .0,
            EXIT_USAGE
        );
        assert_eq!(run_capture(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn influence_ges_and_point() {
        let (code, out, _) = run_capture(&["influence", "--dim", "2", "--cutoff", "4.115"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("k,c,g1,g2,g3\n2,4.115,1.927,1.368,"));
        let (code, out, _) = run_capture(&[
            "--format",
            "json",
            "influence",
            "--dim",
            "2",
            "--family",
            "gaussian-ml",
            "--point",
            "1,-2",
        ]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["vec-m"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn radial_invalid_sigma_exits_two() {
        let (code, _, err) = run_capture(&[
            "simulate",
            "--experiment",
            "radial",
            "--sigma1",
            "1",
            "--sigma2",
            "-1",
            "--replicates",
            "100",
        ]);
        assert_eq!(code, EXIT_USAGE, "{err}");
    }
}
