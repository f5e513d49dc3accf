//! Command implementations behind the `nigvb` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nigvb::distributions::{presets, sample_mixture, DistError, MixtureSpec};
use nigvb::evaluation::{
    adjusted_rand_index_detailed, cross_tab, merge_labels, EvalError, Partition,
};
use nigvb::io::{
    self, linspace, read_labels, write_labels_csv, write_sample, FitConfig, IoError, ModelKind,
    RunError, RunRecord,
};
use nigvb::mixture::{InitMode, VbError};
use thiserror::Error;

pub mod reproduce;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Fit(#[from] VbError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Spec(#[from] DistError),
    #[error("{0}")]
    Usage(String),
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Io(e) => CliError::Io(e),
            RunError::Fit(e) => CliError::Fit(e),
        }
    }
}

impl CliError {
    /// Stable identifier printed with every error.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Io(e) => match e {
                IoError::Io { .. } => "io",
                IoError::Csv { .. } => "csv",
                IoError::Json { .. } => "json",
                IoError::MissingColumn(_) => "missing_column",
                IoError::NonNumeric { .. } => "non_numeric",
                IoError::EmptySelection => "empty_selection",
                IoError::NoRows => "no_rows",
                IoError::Config(_) => "invalid_config",
            },
            CliError::Fit(e) => match e {
                VbError::EmptyData => "no_rows",
                VbError::TooManyComponents { .. } => "too_many_components",
                VbError::InvalidConfig(_) => "invalid_config",
                VbError::NonFiniteData { .. } => "non_finite_data",
                VbError::Shape { .. } => "shape",
                VbError::InvalidHyper { .. } => "invalid_hyper",
                VbError::AllPruned => "all_pruned",
                VbError::Special(_) => "special_function",
                VbError::Linalg(_) => "linear_algebra",
            },
            CliError::Eval(e) => match e {
                EvalError::LengthMismatch { .. } => "length_mismatch",
                EvalError::TooFew(_) => "too_few",
                EvalError::ZeroLabel { .. } => "zero_label",
                EvalError::OverlappingGroups(_) => "overlapping_groups",
            },
            CliError::Spec(_) => "invalid_spec",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_status(&self) -> u8 {
        match self {
            CliError::Fit(VbError::AllPruned | VbError::Special(_) | VbError::Linalg(_)) => {
                EXIT_DEGENERATE
            }
            _ => EXIT_INPUT,
        }
    }
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "nigvb",
    version,
    about = "Variational Bayes NIG mixture clustering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mixture to a CSV file.
    Fit(FitArgs),
    /// Draw a labelled sample from a mixture spec or preset.
    Simulate(SimulateArgs),
    /// Compare two label files (ARI and cross-tabulation).
    Evaluate(EvaluateArgs),
    /// Evaluate a fitted density on a grid.
    DensityGrid(DensityGridArgs),
    /// Run a named study end to end.
    Reproduce(reproduce::ReproduceArgs),
}

/// Command-line mirror of [`FitConfig`]; set flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct FitFlags {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub g_init: Option<usize>,
    #[arg(long)]
    pub init_mode: Option<InitMode>,
    #[arg(long)]
    pub hyper_init: Option<f64>,
    #[arg(long)]
    pub prune_threshold: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated column names.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    #[arg(long)]
    pub label_column: Option<String>,
}

impl FitFlags {
    pub fn apply(&self, mut cfg: FitConfig) -> FitConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { cfg.$f = v; })* };
        }
        set!(
            model,
            g_init,
            init_mode,
            hyper_init,
            prune_threshold,
            tol,
            max_iter,
            seed
        );
        if self.columns.is_some() {
            cfg.columns = self.columns.clone();
        }
        if self.label_column.is_some() {
            cfg.label_column = self.label_column.clone();
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Run record (JSON).
    #[arg(long)]
    pub output: PathBuf,
    /// MAP labels (CSV); defaults to the output path with `.labels.csv`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// JSON file with FitConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FitFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// MixtureSpec JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    /// One of study1, study2, study4, study5.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub a_column: Option<String>,
    #[arg(long)]
    pub b_column: Option<String>,
    /// Label groups merged in the first file, e.g. `2,3,7;1,4`.
    #[arg(long)]
    pub merge: Option<String>,
}

#[derive(Debug, Args)]
pub struct DensityGridArgs {
    /// Run record written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Points per axis (default 512 in 1-D, 100 in 2-D).
    #[arg(long)]
    pub points: Option<usize>,
    /// Lower grid corner; defaults to the data minimum minus 1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Option<Vec<f64>>,
}

/// Runs one command and returns the exit status.
pub fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Fit(args) => {
            let cfg = match &args.config {
                Some(path) => FitConfig::from_json_file(path)?,
                None => FitConfig::default(),
            };
            let cfg = args.flags.apply(cfg);
            let labels = args
                .labels
                .clone()
                .unwrap_or_else(|| labels_path(&args.output));
            let record = cmd_fit(&cfg, &args.input, &args.output, &labels)?;
            let result = &record.payload.result;
            println!(
                "G = {} after {} iterations; record {}",
                result.n_components(),
                result.iterations(),
                args.output.display()
            );
            if result.converged() {
                Ok(EXIT_OK)
            } else {
                eprintln!("warning[not_converged]: max_iter reached before the tolerance was met");
                Ok(EXIT_NOT_CONVERGED)
            }
        }
        Command::Simulate(args) => {
            let (spec, default_n) = match (&args.spec, &args.preset) {
                (Some(path), _) => (io::load_spec(path)?, None),
                (None, Some(name)) => {
                    let (spec, n) = simulation_preset(name)?;
                    (spec, Some(n))
                }
                (None, None) => {
                    return Err(CliError::Usage("--spec or --preset is required".into()))
                }
            };
            let n = args
                .n
                .or(default_n)
                .ok_or_else(|| CliError::Usage("--n is required with --spec".into()))?;
            cmd_simulate(&spec, n, args.seed, &args.output)?;
            Ok(EXIT_OK)
        }
        Command::Evaluate(args) => {
            let groups = args.merge.as_deref().map(parse_merge).transpose()?;
            let report = cmd_evaluate(
                &args.a,
                args.a_column.as_deref(),
                &args.b,
                args.b_column.as_deref(),
                groups.as_deref(),
            )?;
            print!("{report}");
            Ok(EXIT_OK)
        }
        Command::DensityGrid(args) => {
            let record = RunRecord::load(&args.model)?;
            let grid = GridSpec {
                points: args.points,
                lower: args.lower,
                upper: args.upper,
            };
            let rows = cmd_density_grid(&record, &grid, &args.output)?;
            println!("{rows} grid rows written to {}", args.output.display());
            Ok(EXIT_OK)
        }
        Command::Reproduce(args) => reproduce::run(&args),
    }
}

pub fn labels_path(output: &Path) -> PathBuf {
    output.with_extension("labels.csv")
}

/// Fits, then writes the run record and the MAP labels.
pub fn cmd_fit(
    cfg: &FitConfig,
    input: &Path,
    output: &Path,
    labels: &Path,
) -> Result<RunRecord, CliError> {
    let (record, _) = io::run_fit(cfg, input)?;
    record.save(output)?;
    write_labels_csv(labels, "label", record.payload.result.labels())?;
    Ok(record)
}

pub fn simulation_preset(name: &str) -> Result<(MixtureSpec, usize), CliError> {
    match name {
        "study1" => Ok((presets::study1(), presets::STUDY1_N)),
        "study2" => Ok((presets::study2(), presets::STUDY2_N)),
        "study4" => Ok((presets::study4(), presets::STUDY4_N)),
        "study5" => Ok((presets::study5(), presets::STUDY5_N)),
        other => Err(CliError::Usage(format!(
            "unknown simulation preset {other:?}"
        ))),
    }
}

pub fn cmd_simulate(
    spec: &MixtureSpec,
    n: usize,
    seed: u64,
    output: &Path,
) -> Result<(), CliError> {
    let sample = sample_mixture(spec, n, seed)?;
    write_sample(output, &sample, spec, seed)?;
    Ok(())
}

/// Parses `2,3,7;1,4` into label groups.
pub fn parse_merge(text: &str) -> Result<Vec<Vec<usize>>, CliError> {
    text.split(';')
        .map(|group| {
            group
                .split(',')
                .map(|l| {
                    l.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::Usage(format!("bad label {l:?} in merge spec")))
                })
                .collect()
        })
        .collect()
}

/// Positive integer labels are kept as they are; anything else is numbered by
/// first appearance.
pub fn partition_from_strings(labels: &[String]) -> Partition {
    let numeric: Option<Vec<usize>> = labels
        .iter()
        .map(|l| l.parse().ok().filter(|&v: &usize| v > 0))
        .collect();
    match numeric {
        Some(v) => Partition::new(v).expect("labels are positive"),
        None => Partition::from_keys(labels),
    }
}

pub fn cmd_evaluate(
    a: &Path,
    a_column: Option<&str>,
    b: &Path,
    b_column: Option<&str>,
    merge: Option<&[Vec<usize>]>,
) -> Result<String, CliError> {
    let mut pa = partition_from_strings(&read_labels(a, a_column)?);
    let pb = partition_from_strings(&read_labels(b, b_column)?);
    if let Some(groups) = merge {
        pa = merge_labels(&pa, groups)?;
    }
    Ok(evaluation_report(&pa, &pb)?)
}

pub fn evaluation_report(a: &Partition, b: &Partition) -> Result<String, EvalError> {
    let ari = adjusted_rand_index_detailed(a, b)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "ARI = {:.6}{}",
        ari.value,
        if ari.degenerate { " (degenerate)" } else { "" }
    );
    let _ = write!(out, "{}", cross_tab(a, b)?);
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct GridSpec {
    pub points: Option<usize>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

/// Writes `(x, density)` rows in 1-D or `(x1, x2, density)` rows on a 2-D
/// lattice. Returns the number of rows.
pub fn cmd_density_grid(
    record: &RunRecord,
    grid: &GridSpec,
    output: &Path,
) -> Result<usize, CliError> {
    let model = &record.payload.result;
    let d = model.dim();
    if d > 2 {
        return Err(CliError::Usage(format!(
            "density grids need d <= 2, model has d = {d}"
        )));
    }
    let info = &record.payload.dataset;
    let bound =
        |given: &Option<Vec<f64>>, fallback: &[f64], shift: f64| -> Result<Vec<f64>, CliError> {
            match given {
                Some(v) if v.len() == d => Ok(v.clone()),
                Some(v) => Err(CliError::Usage(format!(
                    "grid bound has {} values, model has d = {d}",
                    v.len()
                ))),
                None => Ok(fallback.iter().map(|x| x + shift).collect()),
            }
        };
    let lower = bound(&grid.lower, &info.min, -1.0)?;
    let upper = bound(&grid.upper, &info.max, 1.0)?;
    let points = grid.points.unwrap_or(if d == 1 { 512 } else { 100 });
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|j| linspace(lower[j], upper[j], points))
        .collect();
    let coords: Vec<Vec<f64>> = if d == 1 {
        axes[0].iter().map(|&x| vec![x]).collect()
    } else {
        axes[0]
            .iter()
            .flat_map(|&x| axes[1].iter().map(move |&y| vec![x, y]))
            .collect()
    };
    let flat: Vec<f64> = coords.iter().flatten().copied().collect();
    let density = model.density(&flat)?;

    let mut text = String::new();
    let names: Vec<String> = if info.columns.len() == d {
        info.columns.clone()
    } else {
        (1..=d).map(|j| format!("y{j}")).collect()
    };
    let _ = writeln!(text, "{},density", names.join(","));
    for (point, f) in coords.iter().zip(&density) {
        let cells: Vec<String> = point.iter().map(f64::to_string).collect();
        let _ = writeln!(text, "{},{f}", cells.join(","));
    }
    fs::write(output, text).map_err(|source| IoError::Io {
        path: output.to_path_buf(),
        source,
    })?;
    Ok(coords.len())
}
