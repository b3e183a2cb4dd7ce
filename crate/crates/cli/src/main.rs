use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use resample_lab::analysis::{self, BoundSet};
use resample_lab::empirical::{self, EmpiricalConfig, EmpiricalError};
use resample_lab::experiments::{self, ExperimentError, NoiseSetting, ScenarioConfig};
use resample_lab::output::{self, fmt9, Manifest, RunReport};

#[derive(Parser)]
#[command(name = "resample-lab", version, about = "Bias of resampled backtests for rolling mean-variance rules")]
struct Cli {
    /// Print progress and warnings to stderr (-v) or per-asset failures (-vv)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo bias cross-section over a synthetic universe
    Simulate(SimulateArgs),
    /// Bias bounds from parameters or per asset from a return CSV
    Bounds(BoundsArgs),
    /// Blocksize or dimension sweep
    Sweep(SweepArgs),
    /// Resampled-minus-standard differences on a return CSV
    Empirical(EmpiricalArgs),
    /// Re-render the tables of a previous run from its manifest
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; omitted fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// csv writes every table plus report.json; json writes report.json only
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Monte Carlo paths per asset, overrides the config
    #[arg(long)]
    paths: Option<usize>,
    /// Noise regime, overrides the config
    #[arg(long, value_enum)]
    noise: Option<Noise>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Monte Carlo paths per point, overrides the config
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Args)]
struct EmpiricalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Return CSV: a date column (YYYY-MM) then one column per asset
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, allow_hyphen_values = true, required_unless_present = "data", requires = "psi")]
    theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "theta")]
    psi: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
    /// Rolling window length
    #[arg(long, default_value_t = 60)]
    n: usize,
    /// Return CSV; bounds use each asset's sample Sharpe ratio and lag-1 autocorrelation
    #[arg(long, conflicts_with_all = ["theta", "psi"])]
    data: Option<PathBuf>,
    /// Also write bounds.csv or bounds.json into this directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    /// manifest.json of a previous run
    #[arg(long)]
    manifest: PathBuf,
    /// Target directory, defaults to the manifest's directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Constant,
    Garch,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Blocksize,
    Dimension,
}

/// Failure classes, mapped onto exit codes.
enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Run(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, e) = match self {
            Failure::Config(e) => ("config error", e),
            Failure::Data(e) => ("data error", e),
            Failure::Run(e) => ("error", e),
        };
        write!(f, "{kind}: {e:#}")
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidConfig(_) | ExperimentError::Dgp(_) => Failure::Config(e.into()),
            other => Failure::Run(other.into()),
        }
    }
}

impl From<EmpiricalError> for Failure {
    fn from(e: EmpiricalError) -> Self {
        match e {
            EmpiricalError::InvalidArgument(_) | EmpiricalError::Backtest(_) => Failure::Config(e.into()),
            EmpiricalError::MissingValue { .. }
            | EmpiricalError::NonMonotoneDates { .. }
            | EmpiricalError::ParseError { .. }
            | EmpiricalError::Malformed(_)
            | EmpiricalError::InsufficientData { .. }
            | EmpiricalError::DegenerateSeries => Failure::Data(e.into()),
            other => Failure::Run(other.into()),
        }
    }
}

fn io_failure(e: io::Error, what: &str) -> Failure {
    Failure::Run(anyhow!(e).context(what.to_string()))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Config)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn finish(dir: &Path, manifest: Manifest, report: &RunReport, format: Format) -> Result<(), Failure> {
    let manifest =
        output::write_run(dir, manifest, report, format == Format::Csv).map_err(|e| io_failure(e, "writing outputs"))?;
    for f in std::iter::once(output::MANIFEST.to_string()).chain(manifest.outputs) {
        println!("{}", dir.join(f).display());
    }
    Ok(())
}

fn warn(verbose: u8, failures: &[(String, String)], failed_runs: usize, total_runs: usize) {
    if failed_runs > 0 || !failures.is_empty() {
        eprintln!(
            "warning: {failed_runs} of {total_runs} runs failed, {} assets dropped (within the failure budget)",
            failures.len()
        );
        if verbose > 1 {
            for (id, msg) in failures {
                eprintln!("  {id}: {msg}");
            }
        }
    }
}

fn simulate(args: SimulateArgs, verbose: u8) -> Result<(), Failure> {
    let mut cfg: ScenarioConfig = load_config(args.run.config.as_deref())?;
    if let Some(seed) = args.run.seed {
        cfg.master_seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.paths = paths;
    }
    if let Some(noise) = args.noise {
        cfg.noise = match noise {
            Noise::Constant => NoiseSetting::Constant,
            Noise::Garch => NoiseSetting::Garch,
            Noise::Both => NoiseSetting::Both,
        };
    }
    cfg.validate()?;
    if verbose > 0 {
        eprintln!("simulating {} paths of length {}", cfg.paths, cfg.length);
    }
    let reports = experiments::with_workers(experiments::workers_from_env(), || experiments::run_bias_cross_section(&cfg))?;
    for r in &reports {
        let failures: Vec<_> = r.failures.iter().map(|f| (f.asset_id.clone(), f.message.clone())).collect();
        warn(verbose, &failures, r.failed_runs, r.total_runs);
    }
    let manifest = Manifest::new("simulate", cfg.master_seed, to_value(&cfg));
    finish(&args.run.out, manifest, &RunReport::Simulate { cross_section: reports }, args.run.format)
}

fn sweep(args: SweepArgs, verbose: u8) -> Result<(), Failure> {
    let mut cfg: ScenarioConfig = load_config(args.run.config.as_deref())?;
    if let Some(seed) = args.run.seed {
        cfg.master_seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.sweeps.paths = Some(paths);
    }
    cfg.validate()?;
    let workers = experiments::workers_from_env();
    let (report, command) = match args.kind {
        SweepKind::Blocksize => {
            let r = experiments::with_workers(workers, || experiments::run_blocksize_sweep(&cfg))?;
            let failures: Vec<_> = r.failures.iter().map(|f| (f.asset_id.clone(), f.message.clone())).collect();
            warn(verbose, &failures, 0, r.assets * r.paths);
            (
                RunReport::Sweep {
                    blocksize: Some(r),
                    dimension: None,
                },
                "sweep blocksize",
            )
        }
        SweepKind::Dimension => {
            let r = experiments::with_workers(workers, || experiments::run_dimension_sweep(&cfg))?;
            (
                RunReport::Sweep {
                    blocksize: None,
                    dimension: Some(r),
                },
                "sweep dimension",
            )
        }
    };
    let manifest = Manifest::new(command, cfg.master_seed, to_value(&cfg));
    finish(&args.run.out, manifest, &report, args.run.format)
}

fn read_data(path: &Path) -> Result<(Vec<u8>, empirical::ReturnTable), Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Data)?;
    let table = empirical::load_returns(bytes.as_slice())
        .map_err(|e| Failure::Data(anyhow!(e).context(format!("loading {}", path.display()))))?;
    Ok((bytes, table))
}

fn run_empirical(args: EmpiricalArgs, verbose: u8) -> Result<(), Failure> {
    let mut cfg: EmpiricalConfig = load_config(args.run.config.as_deref())?;
    if let Some(seed) = args.run.seed {
        cfg.seed = seed;
    }
    cfg.backtest
        .validate()
        .map_err(|e| Failure::Config(anyhow!(e).context("backtest config")))?;
    let (bytes, table) = read_data(&args.data)?;
    if verbose > 0 {
        eprintln!("{} assets over {} months", table.assets(), table.periods());
    }
    let report = experiments::with_workers(experiments::workers_from_env(), || empirical::run_empirical(&table, &cfg))?;
    let failures: Vec<_> = report.failures.iter().map(|f| (f.asset_id.clone(), f.message.clone())).collect();
    warn(verbose, &failures, 0, table.assets());
    let name = args
        .data
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = Manifest::new("empirical", cfg.seed, to_value(&cfg)).with_data(&name, &bytes);
    let report = RunReport::Empirical {
        records: report.records,
        failures: report.failures,
        regressions: report.regressions,
        studentized: report.studentized,
    };
    finish(&args.run.out, manifest, &report, args.run.format)
}

const BOUNDS_HEADER: &str = "asset_id,theta,psi,gamma,n,c,mean_bound,var_bound,sr_analytical,sr_numerical,flags";

fn bounds_row(id: &str, b: &BoundSet) -> String {
    format!(
        "{id},{},{},{},{},{},{},{},{},{},{}",
        fmt9(b.theta),
        fmt9(b.psi),
        fmt9(b.gamma),
        b.n,
        fmt9(b.c),
        fmt9(b.mean_bound),
        fmt9(b.var_bound),
        fmt9(b.sr_analytical),
        fmt9(b.sr_numerical),
        b.flag_labels()
    )
}

fn bounds(args: BoundsArgs) -> Result<(), Failure> {
    if !(args.gamma > 0.0) || args.n == 0 {
        return Err(Failure::Config(anyhow!("gamma must be positive and n at least 1")));
    }
    let rows: Vec<(String, BoundSet)> = match (&args.data, args.theta, args.psi) {
        (Some(path), _, _) => {
            let (_, table) = read_data(path)?;
            let mut rows = Vec::new();
            for (m, id) in table.asset_ids.iter().enumerate() {
                match empirical::estimate_bounds_from_data(&table.column(m), args.n, args.gamma) {
                    Ok(b) => rows.push((id.clone(), b)),
                    Err(e) => eprintln!("warning: {id}: {e}"),
                }
            }
            rows
        }
        (None, Some(theta), Some(psi)) => vec![("input".to_string(), analysis::bounds(theta, psi, args.gamma, args.n))],
        _ => return Err(Failure::Config(anyhow!("give --theta and --psi, or --data"))),
    };
    let text = match args.format {
        Format::Csv => {
            let mut s = String::from(BOUNDS_HEADER);
            s.push('\n');
            for (id, b) in &rows {
                s.push_str(&bounds_row(id, b));
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let list: Vec<serde_json::Value> = rows
                .iter()
                .map(|(id, b)| serde_json::json!({ "asset_id": id, "bounds": b }))
                .collect();
            serde_json::to_string_pretty(&list).expect("bounds serialize") + "\n"
        }
    };
    io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| io_failure(e, "writing stdout"))?;
    if let Some(dir) = args.out {
        let name = match args.format {
            Format::Csv => "bounds.csv",
            Format::Json => "bounds.json",
        };
        fs::create_dir_all(&dir)
            .and_then(|_| fs::write(dir.join(name), &text))
            .map_err(|e| io_failure(e, "writing bounds"))?;
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let manifest = Manifest::load(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))
        .map_err(Failure::Config)?;
    let report_path = manifest.report_path(&args.manifest);
    let report = output::load_report(&report_path)
        .with_context(|| format!("reading {}", report_path.display()))
        .map_err(Failure::Data)?;
    let dir = args
        .out
        .unwrap_or_else(|| args.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir).map_err(|e| io_failure(e, "creating output directory"))?;
    let written = match args.format {
        Format::Csv => report.render_tables(&dir).map_err(|e| io_failure(e, "rendering tables"))?,
        Format::Json => {
            output::write_json(&dir.join(output::REPORT), &report).map_err(|e| io_failure(e, "writing report"))?;
            vec![output::REPORT.to_string()]
        }
    };
    for f in written {
        println!("{}", dir.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, verbose),
        Command::Bounds(a) => bounds(a),
        Command::Sweep(a) => sweep(a, verbose),
        Command::Empirical(a) => run_empirical(a, verbose),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
