//! `neurosched` command-line interface.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 qualification, 5 parse, 6 I/O.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use neurosched::basis::{self, check_qualification, FamilySpec};
use neurosched::evaluation::{self, export_regions, reproduce_table, validate, TableConfig};
use neurosched::policy::{load_weights, save_weights};
use neurosched::source::{self, load_dataset, moments, sample_dataset, save_dataset, support_bounds};
use neurosched::training::{self, Batch, Optimizer, TrainConfig};
use neurosched::{Error, GaussianSourceSpec};

use crate::config::RunConfig;

pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_QUALIFICATION: u8 = 4;
pub const EXIT_PARSE: u8 = 5;
pub const EXIT_IO: u8 = 6;

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "NEUROSCHED_THREADS";

#[derive(Parser)]
#[command(name = "neurosched", version, about = "Max-scheduling with learned nonlinear estimators")]
struct Cli {
    /// TOML run configuration; flags given on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a bivariate Gaussian dataset and write it to disk
    Generate(GenerateArgs),
    /// Test whether a basis family has a flat region on an interval
    CheckBasis(CheckBasisArgs),
    /// Fit an estimator pair on a training set and evaluate it on a validation set
    Train(TrainArgs),
    /// Validation cost of the MMSE, linear, softplus and polynomial estimators
    Table(TableArgs),
    /// Export the scheduling decision on a grid
    Regions(RegionsArgs),
}

#[derive(Args)]
struct SourceArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mean1: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mean2: f64,
    #[arg(long, default_value_t = 1.0)]
    var1: f64,
    #[arg(long, default_value_t = 1.0)]
    var2: f64,
    /// Correlation coefficient in [-1, 1]
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    rho: f64,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Number of samples
    #[arg(long, default_value_t = 100_000)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FamilyArgs {
    /// softplus | polynomial | relu-control | piecewise-constant-control
    #[arg(long, default_value = "softplus")]
    family: String,
    /// Polynomial degree
    #[arg(long, default_value_t = basis::DEFAULT_POLYNOMIAL_DEGREE)]
    degree: usize,
    /// Softplus sharpness shared by all units
    #[arg(long, default_value_t = basis::DEFAULT_SOFTPLUS_ALPHA)]
    alpha: f64,
    /// Per-unit softplus sharpness (comma separated)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alphas: Option<Vec<f64>>,
    /// Explicit unit locations (comma separated); default is quantile placement
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    betas: Option<Vec<f64>>,
    /// Per-unit signs, +1 rising or -1 falling (comma separated)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    signs: Option<Vec<i64>>,
    /// Quantile levels for unit placement [softplus default: 0.1,0.3,0.7,0.9, one rising and one falling unit each]
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// Number of control units at equally spaced quantiles
    #[arg(long, default_value_t = basis::DEFAULT_CONTROL_UNITS)]
    units: usize,
}

#[derive(Args)]
struct CheckBasisArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    lo: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    hi: f64,
    #[arg(long, default_value_t = basis::DEFAULT_GRID_POINTS)]
    grid_points: usize,
    #[arg(long, default_value_t = basis::DEFAULT_ZERO_TOL)]
    zero_tol: f64,
    /// Dataset whose pooled coordinates place quantile-based units
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    /// Initial subgradient step size
    #[arg(long, default_value_t = 0.05)]
    step_size_initial: f64,
    /// Geometric step decay per iteration
    #[arg(long, default_value_t = 0.999)]
    step_decay: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Standard deviation of the restart perturbations
    #[arg(long, default_value_t = 0.1)]
    init_noise_scale: f64,
    /// Seed of the restart perturbations and minibatch draws
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    /// Relative cost change that ends a run
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    /// Minibatch size for the subgradient optimizer (full batch when absent)
    #[arg(long)]
    minibatch: Option<usize>,
    /// majorize-minimize | subgradient
    #[arg(long, default_value = "majorize-minimize")]
    optimizer: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "train")]
    train_path: PathBuf,
    #[arg(long = "val")]
    val_path: PathBuf,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Train even if the basis family fails the plateau check
    #[arg(long)]
    allow_unqualified: bool,
    #[arg(long)]
    out_weights: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75", allow_hyphen_values = true)]
    rhos: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    m_train: usize,
    #[arg(long, default_value_t = 100_000)]
    m_val: usize,
    /// Base seed for the per-row training and validation sets
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = basis::DEFAULT_SOFTPLUS_ALPHA)]
    softplus_alpha: f64,
    #[arg(long, default_value_t = basis::DEFAULT_POLYNOMIAL_DEGREE)]
    polynomial_degree: usize,
    #[command(flatten)]
    train: TrainFlags,
    /// Three-decimal CSV; a full-precision copy is written next to it as <stem>.full.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegionsArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 1..=2, default_values_t = [-3.0, 3.0], allow_hyphen_values = true)]
    x1_range: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1..=2, default_values_t = [-3.0, 3.0], allow_hyphen_values = true)]
    x2_range: Vec<f64>,
    /// Grid points per axis
    #[arg(long, default_value_t = 201)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Picks the flag when it was typed, else the config value, else the flag default.
fn layer<T>(m: &ArgMatches, id: &str, flag: T, file: Option<T>) -> T {
    if m.value_source(id) == Some(ValueSource::CommandLine) {
        flag
    } else {
        file.unwrap_or(flag)
    }
}

fn layer_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn family_spec(m: &ArgMatches, a: &FamilyArgs, cfg: &RunConfig) -> Result<FamilySpec, Error> {
    let b = &cfg.basis;
    let kind = if m.value_source("family") == Some(ValueSource::CommandLine) {
        a.family.parse()?
    } else {
        match b.kind {
            Some(k) => k,
            None => a.family.parse()?,
        }
    };
    let mut spec = FamilySpec::of_kind(kind);
    spec.degree = Some(layer(m, "degree", a.degree, b.degree));
    spec.alpha = Some(layer(m, "alpha", a.alpha, b.alpha));
    spec.alphas = layer_opt(a.alphas.clone(), b.alphas.clone());
    spec.betas = layer_opt(a.betas.clone(), b.betas.clone());
    spec.signs = layer_opt(a.signs.clone(), b.signs.clone());
    spec.quantiles = layer_opt(a.quantiles.clone(), b.quantiles.clone());
    spec.units = Some(layer(m, "units", a.units, b.units));
    Ok(spec)
}

fn train_config(m: &ArgMatches, t: &TrainFlags, cfg: &RunConfig, allow_unqualified: bool) -> Result<TrainConfig, Error> {
    let c = &cfg.train;
    let optimizer: Optimizer = if m.value_source("optimizer") == Some(ValueSource::CommandLine) {
        t.optimizer.parse()?
    } else {
        match c.optimizer {
            Some(o) => o,
            None => t.optimizer.parse()?,
        }
    };
    let batch = match t.minibatch {
        Some(size) => Batch::Minibatch(size),
        None => c.batch.unwrap_or(Batch::Full),
    };
    let allow = allow_unqualified || c.allow_unqualified.unwrap_or(false);
    let config = TrainConfig {
        iterations: layer(m, "iterations", t.iterations, c.iterations),
        step_size_initial: layer(m, "step_size_initial", t.step_size_initial, c.step_size_initial),
        step_decay: layer(m, "step_decay", t.step_decay, c.step_decay),
        restarts: layer(m, "restarts", t.restarts, c.restarts),
        init_noise_scale: layer(m, "init_noise_scale", t.init_noise_scale, c.init_noise_scale),
        seed: layer(m, "train_seed", t.train_seed, c.seed),
        tolerance: layer(m, "tolerance", t.tolerance, c.tolerance),
        batch,
        optimizer,
        require_qualified: !allow,
    };
    config.validate()?;
    Ok(config)
}

fn cmd_generate(m: &ArgMatches, a: &GenerateArgs, cfg: &RunConfig) -> Result<(), Error> {
    let s = &cfg.source;
    let spec = GaussianSourceSpec::new(
        layer(m, "mean1", a.source.mean1, s.mean1),
        layer(m, "mean2", a.source.mean2, s.mean2),
        layer(m, "var1", a.source.var1, s.var1),
        layer(m, "var2", a.source.var2, s.var2),
        layer(m, "rho", a.source.rho, s.rho),
    )?;
    let count = layer(m, "m", a.m, cfg.generate.m);
    let seed = layer(m, "seed", a.seed, cfg.generate.seed);
    let ds = sample_dataset(&spec, count, seed)?;
    save_dataset(&ds, &a.out)?;
    let mo = moments(&ds);
    let sb = support_bounds(&ds)?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    println!(
        "mean1={:.4} mean2={:.4} var1={:.4} var2={:.4} corr={:.4}",
        mo.mean1, mo.mean2, mo.var1, mo.var2, mo.corr
    );
    println!(
        "support x1 in [{:.4}, {:.4}], x2 in [{:.4}, {:.4}]",
        sb.c, sb.d, sb.a, sb.b
    );
    Ok(())
}

fn pooled(ds: &source::Dataset) -> Vec<f64> {
    ds.x1().chain(ds.x2()).collect()
}

fn cmd_check_basis(m: &ArgMatches, a: &CheckBasisArgs, cfg: &RunConfig) -> Result<ExitCode, Error> {
    let spec = family_spec(m, &a.family, cfg)?;
    let data = a.data.as_ref().map(load_dataset).transpose()?;
    let family = spec.resolve(data.as_ref().map(pooled).as_deref())?;
    let q = &cfg.qualification;
    let report = check_qualification(
        &family,
        layer(m, "lo", a.lo, q.lo),
        layer(m, "hi", a.hi, q.hi),
        layer(m, "grid_points", a.grid_points, q.grid_points),
        layer(m, "zero_tol", a.zero_tol, q.zero_tol),
    )?;
    let text = format!(
        "family={}\nunits={}\ninterval=[{:?}, {:?}]\ngrid_points={}\nzero_tol={:?}\nplateau_fraction={:?}\nqualified={}\n",
        family.kind(),
        family.num_units(),
        report.lo,
        report.hi,
        report.grid_points,
        report.zero_tol,
        report.plateau_fraction,
        report.qualified
    );
    print!("{text}");
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    Ok(if report.qualified {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_QUALIFICATION)
    })
}

fn cmd_train(m: &ArgMatches, a: &TrainArgs, cfg: &RunConfig) -> Result<(), Error> {
    let train_ds = load_dataset(&a.train_path)?;
    let val_ds = load_dataset(&a.val_path)?;
    let config = train_config(m, &a.train, cfg, a.allow_unqualified)?;
    let family = family_spec(m, &a.family, cfg)?.resolve(Some(&pooled(&train_ds)))?;
    let (pair, report) = training::train(&train_ds, &family, &config, train_ds.spec())?;
    for q in report.qualification.iter().filter(|q| !q.qualified) {
        eprintln!(
            "warning: family is not qualified on [{:.4}, {:.4}] (plateau_fraction {})",
            q.lo, q.hi, q.plateau_fraction
        );
    }
    let eval = validate(&pair, &val_ds)?;
    save_weights(&pair, &a.out_weights)?;
    let mut text = report.to_text();
    text.push_str(&eval.to_text());
    write_file(&a.out_report, &text)?;
    println!(
        "family={} units={} train_cost={:.6} validation_cost={:.6} transmit_fraction_1={:.4}",
        family.kind(),
        family.num_units(),
        report.final_cost,
        eval.empirical_cost,
        eval.transmit_fraction_1
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".into());
    out.with_file_name(format!("{stem}.full.csv"))
}

fn cmd_table(m: &ArgMatches, a: &TableArgs, cfg: &RunConfig) -> Result<(), Error> {
    let t = &cfg.table;
    let softplus = FamilySpec {
        alpha: Some(layer(m, "softplus_alpha", a.softplus_alpha, t.softplus_alpha)),
        ..FamilySpec::softplus()
    };
    let config = TableConfig {
        rhos: layer(m, "rhos", a.rhos.clone(), t.rhos.clone()),
        train: train_config(m, &a.train, cfg, false)?,
        m_train: layer(m, "m_train", a.m_train, t.m_train),
        m_val: layer(m, "m_val", a.m_val, t.m_val),
        seed: layer(m, "seed", a.seed, t.seed),
        softplus,
        polynomial: FamilySpec::polynomial(layer(m, "polynomial_degree", a.polynomial_degree, t.polynomial_degree)),
    };
    let rows = reproduce_table(&config)?;
    let csv = evaluation::table_csv(&rows);
    write_file(&a.out, &csv)?;
    write_file(&sidecar_path(&a.out), &evaluation::table_csv_full(&rows))?;
    print!("{csv}");
    Ok(())
}

fn pair_of(v: &[f64], name: &str) -> Result<(f64, f64), Error> {
    match v {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::Validation(format!("{name} needs exactly two values"))),
    }
}

fn cmd_regions(m: &ArgMatches, a: &RegionsArgs, cfg: &RunConfig) -> Result<(), Error> {
    let r = &cfg.regions;
    let pair = load_weights(&a.weights)?;
    let x1_range = layer(m, "x1_range", pair_of(&a.x1_range, "x1-range")?, r.x1_range);
    let x2_range = layer(m, "x2_range", pair_of(&a.x2_range, "x2-range")?, r.x2_range);
    let resolution = layer(m, "resolution", a.resolution, r.resolution);
    let grid = export_regions(&pair, x1_range, x2_range, resolution)?;
    write_file(&a.out, &grid.to_csv())?;
    println!(
        "wrote {}x{} decision grid to {}",
        grid.resolution,
        grid.resolution,
        a.out.display()
    );
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) => EXIT_VALIDATION,
        Error::Qualification { .. } => EXIT_QUALIFICATION,
        Error::Parse { .. } => EXIT_PARSE,
        Error::Io { .. } => EXIT_IO,
    }
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    Ok(())
}

fn run(matches: &ArgMatches) -> Result<ExitCode, Error> {
    let cli = Cli::from_arg_matches(matches).unwrap_or_else(|e| e.exit());
    configure_threads()?;
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    match &cli.command {
        Command::Generate(a) => cmd_generate(sub, a, &cfg).map(|_| ExitCode::SUCCESS),
        Command::CheckBasis(a) => cmd_check_basis(sub, a, &cfg),
        Command::Train(a) => cmd_train(sub, a, &cfg).map(|_| ExitCode::SUCCESS),
        Command::Table(a) => cmd_table(sub, a, &cfg).map(|_| ExitCode::SUCCESS),
        Command::Regions(a) => cmd_regions(sub, a, &cfg).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    match run(&matches) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
