//! Command-line surface over the fitting pipeline. Every subcommand is a
//! thin wrapper: parsing and file plumbing here, all numerics in the
//! library. stdout carries only data and tables; warnings, timing, and
//! errors go to stderr. Exit codes: 0 success, 1 user error, 2 when the
//! numerics fail on otherwise valid input.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use statrs::distribution::{ContinuousCDF, Normal};

use gamm_core::basis::RowValues;
use gamm_core::dataset::{
    combine_factors, copy_factor, load_long_csv, mark_series_starts, to_ordered_treatment,
    write_csv, ColumnType, DataError, Dataset, MissingPolicy,
};
use gamm_core::diagnostics::{acf_split, residuals, DiagError, ResidualKind};
use gamm_core::engine::{
    fit, FitOptions, FittedModel, Method, ModelError, MODEL_SCHEMA, MODEL_VERSION,
};
use gamm_core::formula::{parse_formula, FormulaError};
use gamm_core::inference::{
    compare_ml, predict_diff, predict_smooth, predict_surface, summarize, InferError, CI_MULT,
};
use gamm_core::simgen::{
    gen_words, run_power_harness, run_type1_harness, ModelVariant, SimConfig, SimError,
};

fn version_line() -> String {
    format!(
        "{} (model schema {MODEL_SCHEMA} v{MODEL_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

#[derive(Parser)]
#[command(
    name = "gamm",
    version = version_line(),
    about = "Additive mixed models for grouped trajectory data",
    disable_help_subcommand = true
)]
struct Cli {
    /// Cap the worker threads used by parallel subcommands.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model to a long-format CSV and save it as JSON.
    Fit(FitArgs),
    /// Print the summary tables of a saved model.
    Summarize(SummarizeArgs),
    /// Score-based ML comparison of two nested saved models.
    Compare(CompareArgs),
    /// Fitted curve with pointwise confidence bands over one covariate.
    Predict(PredictArgs),
    /// Difference curve between two levels of a factor.
    Diff(DiffArgs),
    /// Fitted values over a two-covariate grid.
    Surface(SurfaceArgs),
    /// Split-series autocorrelation of a saved model's residuals.
    Acf(AcfArgs),
    /// Generate a synthetic trajectory dataset as CSV.
    Simulate(SimulateArgs),
    /// Monte-Carlo false-positive / power harness.
    Harness(HarnessArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV, one row per observation.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Model formula, e.g. "f2 ~ word.ord + s(measurement.no, k=10)".
    #[arg(long)]
    formula: String,
    /// Smoothing-parameter criterion: GCV, ML, REML, or fREML.
    #[arg(long, default_value = "REML")]
    method: String,
    /// AR1 correlation of within-series errors; needs --series and --order.
    #[arg(long)]
    rho: Option<f64>,
    /// Factor column identifying each series.
    #[arg(long, value_name = "COL")]
    series: Option<String>,
    /// Numeric column ordering rows within a series.
    #[arg(long, value_name = "COL")]
    order: Option<String>,
    /// Mark COL as an ordered factor with reference REF. A missing COL
    /// named like `word.ord` is first copied from its base column `word`.
    #[arg(long, value_name = "COL=REF")]
    ordered: Vec<String>,
    /// Combine two factors into a new interaction factor.
    #[arg(long, value_name = "A,B=NEW")]
    combine: Vec<String>,
    /// Load a column as a factor even when every cell parses as a number.
    #[arg(long, value_name = "COL")]
    factor: Vec<String>,
    /// Drop rows with missing cells instead of rejecting the file.
    #[arg(long)]
    drop_na: bool,
    /// Where to write the fitted-model JSON.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Fitted-model JSON from `fit`.
    #[arg(value_name = "FILE")]
    model: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Fitted-model JSON of the full model.
    full: PathBuf,
    /// Fitted-model JSON of the reduced model.
    reduced: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted-model JSON from `fit`.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Numeric covariate to sweep over its observed range.
    #[arg(long, value_name = "COL")]
    view: String,
    /// Pin a covariate: COL=VALUE for numerics, COL=LEVEL for factors.
    /// Unpinned covariates sit at their median / reference level.
    #[arg(long, value_name = "COL=VALUE")]
    cond: Vec<String>,
    /// Pin one factor level, for per-level curve families.
    #[arg(long, value_name = "FACTOR=LEVEL")]
    by_level: Option<String>,
    /// Zero out random terms (population-level prediction).
    #[arg(long)]
    exclude_random: bool,
    /// Number of grid points.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Confidence level; 0.95 keeps the conventional 1.96 multiplier,
    /// any other level uses the exact normal quantile.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output CSV (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Numeric covariate to sweep.
    #[arg(long, value_name = "COL")]
    view: String,
    /// Levels to contrast: FACTOR=HI,LO computes HI minus LO.
    #[arg(long, value_name = "FACTOR=HI,LO")]
    comp: String,
    #[arg(long, value_name = "COL=VALUE")]
    cond: Vec<String>,
    #[arg(long)]
    exclude_random: bool,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// The two numeric covariates spanning the surface.
    #[arg(long, value_name = "V1,V2")]
    view: String,
    #[arg(long, value_name = "COL=VALUE")]
    cond: Vec<String>,
    /// Clamp the second covariate's grid range.
    #[arg(long, value_name = "LO,HI")]
    ylim: Option<String>,
    #[arg(long)]
    exclude_random: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AcfArgs {
    /// Fitted-model JSON; must have been fitted with --series/--order.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Largest lag; defaults to min(10, shortest series − 1).
    #[arg(long, value_name = "N")]
    max_lag: Option<usize>,
    /// Use AR1-whitened residuals (needs a model fitted with --rho).
    #[arg(long)]
    normalized: bool,
    /// Output CSV; when given, a text sketch is printed to stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Generator overrides shared by `simulate` and `harness`; unset flags
/// keep the preset's defaults.
#[derive(Args)]
struct SimOverrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectories per word level.
    #[arg(long)]
    n_traj: Option<usize>,
    /// Samples per trajectory.
    #[arg(long)]
    n_points: Option<usize>,
    /// Level-B offset reached at the final sample.
    #[arg(long)]
    effect: Option<f64>,
    /// Duration modulation of the trajectory shape.
    #[arg(long)]
    dur_scale: Option<f64>,
    /// Scale of per-trajectory smooth deviations.
    #[arg(long)]
    amplitude: Option<f64>,
    /// AR1 correlation of the noise generator.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario preset; `words` is the only one.
    #[arg(long, default_value = "words")]
    preset: String,
    #[command(flatten)]
    over: SimOverrides,
    /// Output CSV (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HarnessArgs {
    /// `type1` (requires effect 0) or `power`.
    #[arg(long, default_value = "type1")]
    mode: String,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    /// Decision methods to tally, e.g. 1,2,3.
    #[arg(long, default_value = "1,2,3,4,5,6")]
    methods: String,
    /// Fitted-model variant: none, ar1, or fs.
    #[arg(long, default_value = "none")]
    variant: String,
    #[command(flatten)]
    over: SimOverrides,
    /// Output JSON report (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Errors and exit codes

#[derive(Debug)]
enum CliError {
    /// Bad invocation or unreadable/ill-formed inputs: exit 1.
    User(String),
    /// The numerics failed on otherwise valid input: exit 2.
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<FormulaError> for CliError {
    fn from(e: FormulaError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Singular(_)
            | ModelError::Saturated { .. }
            | ModelError::DegenerateScale
            | ModelError::NoFiniteScore => CliError::Numeric(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<InferError> for CliError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::ViewNotInModel(_)
            | InferError::FactorNotInModel(_)
            | InferError::BadLevel { .. } => CliError::User(e.to_string()),
            InferError::Io(_) => CliError::User(e.to_string()),
            // Dataset mismatch, df/chisq trouble, evaluation failures.
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::LengthMismatch { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Entry

fn main() {
    // Die quietly when a pipe reader closes early (`gamm acf ... | head`),
    // like any other line-oriented tool; Rust's runtime masks SIGPIPE.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; those print to stdout and
            // exit 0. Genuine usage errors exit 1, not clap's default 2,
            // which is reserved for numerical failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            std::process::exit(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: could not configure worker threads: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Summarize(a) => cmd_summarize(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Diff(a) => cmd_diff(a),
        Cmd::Surface(a) => cmd_surface(a),
        Cmd::Acf(a) => cmd_acf(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Harness(a) => cmd_harness(a),
    }
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_fit(a: FitArgs) -> Result<(), CliError> {
    if a.rho.is_some() && (a.series.is_none() || a.order.is_none()) {
        return Err(CliError::User(
            "--rho requires --series and --order".into(),
        ));
    }
    if a.series.is_some() != a.order.is_some() {
        return Err(CliError::User(
            "--series and --order go together".into(),
        ));
    }
    let mut data = load_data(&a.data, &a.factor, a.drop_na)?;
    for spec in &a.combine {
        let (x, y, new) = parse_combine(spec)?;
        data = combine_factors(&data, &x, &y, &new)?;
    }
    for spec in &a.ordered {
        let (col, reference) = parse_eq(spec)?;
        data = ensure_ordered(data, &col, &reference)?;
    }
    let series = match (&a.series, &a.order) {
        (Some(s), Some(o)) => Some(mark_series_starts(&data, s, o)?),
        _ => None,
    };
    let formula = parse_formula(&a.formula)?;
    let opts = FitOptions {
        method: parse_method(&a.method)?,
        rho: a.rho,
        series,
    };
    let t0 = Instant::now();
    let fitted = fit(&formula, &data, &opts)?;
    let elapsed = t0.elapsed();
    if !fitted.converged {
        eprintln!("warning: smoothing-parameter search did not fully converge");
    }
    let json = fitted.to_json()?;
    fs::write(&a.out, json)
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", a.out.display())))?;
    print!("{}", summarize(&fitted));
    eprintln!("fit time: {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

fn cmd_summarize(a: SummarizeArgs) -> Result<(), CliError> {
    let fitted = load_model(&a.model)?;
    print!("{}", summarize(&fitted));
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<(), CliError> {
    let full = load_model(&a.full)?;
    let reduced = load_model(&a.reduced)?;
    let cmp = compare_ml(&full, &reduced)?;
    for w in &cmp.warnings {
        eprintln!("warning: {w}");
    }
    print!("{cmp}");
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let fitted = load_model(&a.model)?;
    let cond = parse_cond(&fitted, &a.cond)?;
    let by = a.by_level.as_deref().map(parse_eq).transpose()?;
    let mut grid = predict_smooth(
        &fitted,
        &a.view,
        &cond,
        by.as_ref().map(|(f, l)| (f.as_str(), l.as_str())),
        a.exclude_random,
        check_grid(a.grid)?,
    )?;
    grid.rescale_ci(ci_mult(a.level)?);
    with_output(a.out.as_deref(), |w| Ok(grid.emit_csv(w)?))
}

fn cmd_diff(a: DiffArgs) -> Result<(), CliError> {
    let fitted = load_model(&a.model)?;
    let cond = parse_cond(&fitted, &a.cond)?;
    let (factor, hi, lo) = parse_comp(&a.comp)?;
    let mut grid = predict_diff(
        &fitted,
        &a.view,
        &factor,
        &hi,
        &lo,
        &cond,
        a.exclude_random,
        check_grid(a.grid)?,
    )?;
    grid.rescale_ci(ci_mult(a.level)?);
    with_output(a.out.as_deref(), |w| Ok(grid.emit_csv(w)?))
}

fn cmd_surface(a: SurfaceArgs) -> Result<(), CliError> {
    let fitted = load_model(&a.model)?;
    let cond = parse_cond(&fitted, &a.cond)?;
    let (v1, v2) = a
        .view
        .split_once(',')
        .filter(|(x, y)| !x.is_empty() && !y.is_empty())
        .ok_or_else(|| CliError::User(format!("--view takes V1,V2, got `{}`", a.view)))?;
    let ylim = match &a.ylim {
        Some(s) => Some(parse_two_f64(s, "--ylim")?),
        None => None,
    };
    let surf = predict_surface(&fitted, v1, v2, &cond, a.exclude_random, ylim)?;
    with_output(a.out.as_deref(), |w| Ok(surf.emit_csv(w)?))
}

fn cmd_acf(a: AcfArgs) -> Result<(), CliError> {
    let fitted = load_model(&a.model)?;
    let kind = if a.normalized {
        ResidualKind::Normalized
    } else {
        ResidualKind::Raw
    };
    let values = residuals(&fitted, kind)?;
    let series = fitted
        .series
        .as_ref()
        .ok_or(CliError::User(DiagError::NoSeries.to_string()))?;
    let table = acf_split(values, series, a.max_lag)?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    with_output(a.out.as_deref(), |w| Ok(table.emit_csv(w)?))?;
    if a.out.is_some() {
        print!("{}", table.sketch());
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let cfg = preset_config(&a.preset, &a.over)?;
    let data = gen_words(&cfg)?;
    with_output(a.out.as_deref(), |w| Ok(write_csv(&data, w)?))
}

fn cmd_harness(a: HarnessArgs) -> Result<(), CliError> {
    let cfg = preset_config("words", &a.over)?;
    let methods = parse_method_list(&a.methods)?;
    let variant: ModelVariant = a.variant.parse().map_err(CliError::User)?;
    let t0 = Instant::now();
    let report = match a.mode.as_str() {
        "type1" => run_type1_harness(&cfg, a.replicates, &methods, variant)?,
        "power" => run_power_harness(&cfg, a.replicates, &methods, variant)?,
        other => {
            return Err(CliError::User(format!(
                "mode must be type1 or power, got `{other}`"
            )))
        }
    };
    eprintln!(
        "harness: {} replicates ({} fit failures) in {:.1} s",
        report.replicates,
        report.fit_failures,
        t0.elapsed().as_secs_f64()
    );
    with_output(a.out.as_deref(), |w| {
        writeln!(w, "{}", report.to_json())
            .map_err(|e| CliError::User(format!("cannot write report: {e}")))
    })
}

// ---------------------------------------------------------------------------
// Plumbing

fn load_model(path: &Path) -> Result<FittedModel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    FittedModel::from_json(&text)
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path, forced_factors: &[String], drop_na: bool) -> Result<Dataset, CliError> {
    let schema = infer_schema(path, forced_factors)?;
    let missing = if drop_na {
        MissingPolicy::DropRows
    } else {
        MissingPolicy::Reject
    };
    Ok(load_long_csv(path, &schema, missing)?)
}

/// One pre-pass over the file: a column is numeric when every non-missing
/// cell parses as a float, a factor otherwise (or when forced).
fn infer_schema(
    path: &Path,
    forced_factors: &[String],
) -> Result<Vec<(String, ColumnType)>, CliError> {
    let cannot = |e: &dyn fmt::Display| CliError::User(format!("cannot read {}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| cannot(&e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| cannot(&e))?
        .iter()
        .map(str::to_string)
        .collect();
    for f in forced_factors {
        if !headers.iter().any(|h| h == f) {
            return Err(CliError::User(format!(
                "--factor column `{f}` is not in {}",
                path.display()
            )));
        }
    }
    let mut numeric = vec![true; headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| cannot(&e))?;
        for (i, cell) in record.iter().enumerate() {
            if cell.is_empty() || cell == "NA" {
                continue;
            }
            if numeric[i] && cell.parse::<f64>().is_err() {
                numeric[i] = false;
            }
        }
    }
    Ok(headers
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let ty = if forced_factors.contains(&name) || !numeric[i] {
                ColumnType::Factor
            } else {
                ColumnType::Numeric
            };
            (name, ty)
        })
        .collect())
}

/// Convert `col` to an ordered factor. When `col` is absent but carries a
/// `.ord` suffix whose base column exists, the base is copied first — the
/// conventional way of keeping `word` and an ordered `word.ord` side by
/// side.
fn ensure_ordered(data: Dataset, col: &str, reference: &str) -> Result<Dataset, CliError> {
    let data = if data.factor(col).is_ok() {
        data
    } else {
        match col.strip_suffix(".ord") {
            Some(base) if data.factor(base).is_ok() => copy_factor(&data, base, col)?,
            _ => {
                return Err(CliError::User(format!(
                    "--ordered: no factor column `{col}` in the data"
                )))
            }
        }
    };
    Ok(to_ordered_treatment(&data, col, reference)?)
}

fn preset_config(preset: &str, over: &SimOverrides) -> Result<SimConfig, CliError> {
    if preset != "words" {
        return Err(CliError::User(format!(
            "unknown preset `{preset}`; available: words"
        )));
    }
    let mut cfg = SimConfig::default();
    if let Some(v) = over.seed {
        cfg.seed = v;
    }
    if let Some(v) = over.n_traj {
        cfg.n_traj = v;
    }
    if let Some(v) = over.n_points {
        cfg.n_points = v;
    }
    if let Some(v) = over.effect {
        cfg.effect = v;
    }
    if let Some(v) = over.dur_scale {
        cfg.dur_scale = v;
    }
    if let Some(v) = over.amplitude {
        cfg.amplitude = v;
    }
    if let Some(v) = over.rho {
        cfg.rho = v;
    }
    if let Some(v) = over.noise_sd {
        cfg.noise_sd = v;
    }
    Ok(cfg)
}

fn with_output(
    path: Option<&Path>,
    emit: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let cannot = |e: io::Error| CliError::User(format!("cannot write {}: {e}", p.display()));
            let file = File::create(p).map_err(cannot)?;
            let mut w = BufWriter::new(file);
            emit(&mut w)?;
            w.flush().map_err(cannot)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            emit(&mut lock)
        }
    }
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "gcv" => Ok(Method::Gcv),
        "ml" => Ok(Method::Ml),
        "reml" => Ok(Method::Reml),
        "freml" => Ok(Method::Freml),
        _ => Err(CliError::User(format!(
            "method must be one of GCV, ML, REML, fREML; got `{s}`"
        ))),
    }
}

fn parse_method_list(s: &str) -> Result<Vec<u8>, CliError> {
    s.split(',')
        .map(|tok| {
            tok.trim().parse::<u8>().map_err(|_| {
                CliError::User(format!("--methods takes numbers like 1,2,3; got `{tok}`"))
            })
        })
        .collect()
}

fn parse_eq(s: &str) -> Result<(String, String), CliError> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(CliError::User(format!("expected KEY=VALUE, got `{s}`"))),
    }
}

fn parse_comp(s: &str) -> Result<(String, String, String), CliError> {
    let (factor, levels) = parse_eq(s)?;
    match levels.split_once(',') {
        Some((hi, lo)) if !hi.is_empty() && !lo.is_empty() => {
            Ok((factor, hi.to_string(), lo.to_string()))
        }
        _ => Err(CliError::User(format!(
            "--comp takes FACTOR=HI,LO, got `{s}`"
        ))),
    }
}

fn parse_combine(s: &str) -> Result<(String, String, String), CliError> {
    let (pair, new) = parse_eq(s)?;
    match pair.split_once(',') {
        Some((x, y)) if !x.is_empty() && !y.is_empty() => {
            Ok((x.to_string(), y.to_string(), new))
        }
        _ => Err(CliError::User(format!(
            "--combine takes A,B=NEW, got `{s}`"
        ))),
    }
}

fn parse_two_f64(s: &str, flag: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::User(format!("{flag} takes LO,HI, got `{s}`"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

/// Map `name=value` pins onto the model's covariates, using the model's
/// own metadata to tell numerics from factor levels.
fn parse_cond(fitted: &FittedModel, pairs: &[String]) -> Result<RowValues, CliError> {
    let mut cond = RowValues::default();
    for pair in pairs {
        let (name, value) = parse_eq(pair)?;
        if fitted.numeric_meta(&name).is_some() {
            let v: f64 = value.parse().map_err(|_| {
                CliError::User(format!("--cond {name}: `{value}` is not a number"))
            })?;
            cond.numerics.insert(name, v);
        } else if fitted.factor_meta(&name).is_some() {
            cond.levels.insert(name, value);
        } else {
            return Err(CliError::User(format!(
                "`{name}` is not a covariate of this model"
            )));
        }
    }
    Ok(cond)
}

fn check_grid(grid: usize) -> Result<usize, CliError> {
    if grid < 2 {
        return Err(CliError::User("--grid must be at least 2".into()));
    }
    Ok(grid)
}

/// 0.95 keeps the conventional 1.96; anything else gets the exact
/// two-sided normal quantile.
fn ci_mult(level: f64) -> Result<f64, CliError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::User(format!(
            "--level must be strictly between 0 and 1, got {level}"
        )));
    }
    if (level - 0.95).abs() < 1e-12 {
        return Ok(CI_MULT);
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 * (1.0 + level)))
}
