//! Command-line front end: fit models to CSV data, simulate datasets from
//! the built-in presets, run simulation grids, and filter grid results.
//!
//! Exit codes: 0 = success (fit accepted), 2 = fit ran but was rejected by
//! the acceptability screen, 1 = any error. Stdout carries machine-readable
//! output only; progress and diagnostics go to standard error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use rbsem::data::Dataset;
use rbsem::datagen::{self, DistributionSpec};
use rbsem::estimators::{self, Estimator, FitOptions};
use rbsem::model::presets::{self, Reliability};
use rbsem::model::{json as model_json, ModelSpec};
use rbsem::simstudy::{self, GridConfig, ModelKind};

#[derive(Parser)]
#[command(
    name = "rbsem",
    version,
    about = "Structural equation models: maximum-likelihood and reduced-bias estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV dataset and print the fit as JSON.
    Fit(FitArgs),
    /// Simulate a dataset from a preset model and write CSV + manifest.
    Simulate(SimulateArgs),
    /// Run a simulation-study grid from a JSON configuration.
    Grid(GridArgs),
    /// Filter rows out of a grid results.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Preset name (two_factor, gcm) or path to a model JSON file.
    #[arg(long)]
    model: String,
    /// CSV of observations, one row per case; a header line is allowed.
    #[arg(long)]
    data: PathBuf,
    /// ML, eRBM, iRBM, Boot, Jack, or REML (case-insensitive).
    #[arg(long, default_value = "ML")]
    estimator: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resample count for the bootstrap correction.
    #[arg(long, default_value_t = 200)]
    bootstrap_reps: usize,
    /// Trim bounds "lo,hi" applied to bootstrap replicate means.
    #[arg(long)]
    bootstrap_trim: Option<String>,
    /// Write the fit JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name: two_factor or gcm.
    #[arg(long)]
    model: String,
    /// Number of cases to draw.
    #[arg(long)]
    n: usize,
    /// high or low.
    #[arg(long, default_value = "high")]
    reliability: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    skewness: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    excess_kurtosis: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; the manifest lands next to it.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// JSON grid configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// results.csv produced by `rbsem grid`.
    #[arg(long)]
    results: PathBuf,
    /// Keep only rows for this model.
    #[arg(long)]
    model: Option<String>,
    /// Keep only rows for this estimator.
    #[arg(long)]
    estimator: Option<String>,
    /// Keep only rows for this parameter.
    #[arg(long)]
    parameter: Option<String>,
    /// Keep only rows for this sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors; everything else is
            // exit 1 so exit 2 stays reserved for rejected fits.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Report(args) => cmd_report(args),
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn resolve_model(name: &str) -> anyhow::Result<ModelSpec> {
    if let Some(spec) = presets::by_name(name) {
        return Ok(spec);
    }
    let path = Path::new(name);
    if path.is_file() {
        return model_json::from_json_path(path)
            .with_context(|| format!("invalid model file {}", path.display()));
    }
    bail!("model {name:?} is neither a preset (two_factor, gcm) nor a readable file");
}

fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::read_csv_path(path)
        .with_context(|| format!("cannot open data file {}", path.display()))
}

fn parse_trim(text: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        bail!("--bootstrap-trim expects \"lo,hi\", e.g. 0.005,0.995");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<ExitCode> {
    let spec = resolve_model(&args.model)?;
    let data = read_dataset(&args.data)?;
    let estimator: Estimator = args.estimator.parse()?;
    let opts = FitOptions {
        seed: args.seed,
        bootstrap_reps: args.bootstrap_reps,
        bootstrap_trim: args.bootstrap_trim.as_deref().map(parse_trim).transpose()?,
        ..FitOptions::default()
    };
    let fit = estimators::fit(&spec, &data, estimator, &opts)?;

    let mut value = serde_json::to_value(&fit)?;
    value["parameters"] = serde_json::to_value(spec.label_names())?;
    let text = format!("{}\n", serde_json::to_string_pretty(&value)?);
    match &args.output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    if !fit.acceptable {
        eprintln!("fit rejected: {}", fit.rejection_reason.as_str());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let kind: ModelKind = args.model.parse()?;
    let rel: Reliability = args.reliability.parse()?;
    let dist = DistributionSpec::new(args.skewness, args.excess_kurtosis)?;
    let spec = kind.spec();
    let truth = kind.truth(rel);
    let data = datagen::simulate(&spec, &truth, args.n, &dist, args.seed)?;

    let mut out = String::new();
    let header: Vec<String> = (1..=data.p()).map(|j| format!("y{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.n() {
        let row = data.row(i);
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(&args.output, out)
        .with_context(|| format!("cannot write {}", args.output.display()))?;

    let manifest = serde_json::json!({
        "model": kind.as_str(),
        "n": args.n,
        "reliability": rel.as_str(),
        "dist": dist,
        "seed": args.seed,
        "parameters": spec.label_names(),
        "truth": truth.as_slice(),
    });
    let manifest_path = args.output.with_extension("manifest.json");
    fs::write(&manifest_path, format!("{}\n", serde_json::to_string_pretty(&manifest)?))?;
    eprintln!(
        "wrote {} ({}×{}) and {}",
        args.output.display(),
        data.n(),
        data.p(),
        manifest_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

fn cmd_grid(args: GridArgs) -> anyhow::Result<ExitCode> {
    let config = GridConfig::from_json_path(&args.config)
        .with_context(|| format!("invalid grid config {}", args.config.display()))?;
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    let mut progress = |done: usize, total: usize, desc: &str| {
        eprintln!("cell {done}/{total}: {desc}");
    };
    let outcome = simstudy::run_grid(&config, Some(&mut progress))?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    if outcome.cells_failed > 0 {
        eprintln!("{} cell(s) failed; see the manifest for details", outcome.cells_failed);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(args: ReportArgs) -> anyhow::Result<ExitCode> {
    let estimator_filter = args
        .estimator
        .as_deref()
        .map(|e| e.parse::<Estimator>())
        .transpose()?
        .map(|e| e.as_str().to_string());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&args.results)
        .with_context(|| format!("cannot open {}", args.results.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let mut kept: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |name: &str| -> &str {
            headers
                .iter()
                .position(|h| h == name)
                .map(|i| record.get(i).unwrap_or(""))
                .unwrap_or("")
        };
        if let Some(m) = &args.model {
            if field("model") != m {
                continue;
            }
        }
        if let Some(n) = args.n {
            if field("n") != n.to_string() {
                continue;
            }
        }
        if let Some(e) = &estimator_filter {
            if field("estimator") != e {
                continue;
            }
        }
        if let Some(p) = &args.parameter {
            if field("parameter") != p {
                continue;
            }
        }
        kept.push(record.iter().map(str::to_string).collect());
    }

    let text = match args.format {
        Format::Csv => {
            let mut out = headers.join(",");
            out.push('\n');
            for row in &kept {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let objects: Vec<serde_json::Value> = kept
                .iter()
                .map(|row| {
                    headers
                        .iter()
                        .zip(row)
                        .map(|(h, v)| (h.clone(), serde_json::Value::String(v.clone())))
                        .collect::<serde_json::Map<_, _>>()
                        .into()
                })
                .collect();
            format!("{}\n", serde_json::to_string_pretty(&objects)?)
        }
    };
    match &args.output {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
