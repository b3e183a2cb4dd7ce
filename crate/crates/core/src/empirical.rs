//! Historical-data pipeline: ingest a monthly return table, compute per-asset
//! resampled-minus-standard differences, stationary-bootstrap inference,
//! bounds estimated from sample moments, and regressions of the differences
//! on estimated dependence components.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, BoundSet, DependenceComponents};
use crate::backtest::{self, BacktestError, MomentSummary, ResampleScheme};
use crate::dgp::{Origin, SamplePath};
use crate::portfolio::BacktestConfig;
use crate::rng::{self, tag};
use crate::stats::{self, OlsFit, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmpiricalError {
    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },
    #[error("dates not strictly increasing at row {row} ('{date}' after '{previous}')")]
    NonMonotoneDates {
        row: usize,
        date: String,
        previous: String,
    },
    #[error("cannot parse row {row}, column '{column}': {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ─── Return tables ──────────────────────────────────────────────────────────

/// A `T × M` panel of monthly decimal returns with `YYYY-MM` date labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTable {
    pub dates: Vec<String>,
    pub asset_ids: Vec<String>,
    returns: SamplePath,
}

fn parse_month(s: &str) -> Option<(i32, u32)> {
    let (y, m) = s.split_once('-')?;
    if y.len() != 4 || m.len() != 2 {
        return None;
    }
    let year: i32 = y.parse().ok()?;
    let month: u32 = m.parse().ok()?;
    (1..=12).contains(&month).then_some((year, month))
}

impl ReturnTable {
    pub fn new(dates: Vec<String>, asset_ids: Vec<String>, rows: Vec<f64>) -> Result<Self, EmpiricalError> {
        let periods = dates.len();
        let assets = asset_ids.len();
        if periods < 2 {
            return Err(EmpiricalError::InsufficientData { needed: 2, got: periods });
        }
        if assets == 0 {
            return Err(EmpiricalError::Malformed("no asset columns".into()));
        }
        let mut previous: Option<(i32, u32)> = None;
        for (i, d) in dates.iter().enumerate() {
            let parsed = parse_month(d).ok_or_else(|| EmpiricalError::ParseError {
                row: i + 1,
                column: "date".into(),
                message: format!("'{d}' is not a YYYY-MM month"),
            })?;
            if let Some(prev) = previous {
                if parsed <= prev {
                    return Err(EmpiricalError::NonMonotoneDates {
                        row: i + 1,
                        date: d.clone(),
                        previous: dates[i - 1].clone(),
                    });
                }
            }
            previous = Some(parsed);
        }
        let returns = SamplePath::from_rows(rows, periods, assets, Origin::Historical)
            .map_err(|e| EmpiricalError::Malformed(e.to_string()))?;
        Ok(Self {
            dates,
            asset_ids,
            returns,
        })
    }

    pub fn periods(&self) -> usize {
        self.returns.len()
    }

    pub fn assets(&self) -> usize {
        self.returns.assets()
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.returns.column(m)
    }

    pub fn as_path(&self) -> &SamplePath {
        &self.returns
    }

    /// Writes the table in the same CSV layout that [`load_returns`] reads.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), std::io::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.asset_ids.iter().cloned());
        w.write_record(&header)?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.clone()];
            rec.extend(self.returns.row(t).iter().map(|v| format!("{v:.10e}")));
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

/// Reads `date,<id1>,...,<idM>` CSV with `YYYY-MM` dates and decimal returns.
/// Row numbers in errors count data rows from 1.
pub fn load_returns<R: Read>(source: R) -> Result<ReturnTable, EmpiricalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| EmpiricalError::Malformed(e.to_string()))?
        .clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(EmpiricalError::Malformed("header must be 'date,<id1>,...,<idM>'".into()));
    }
    let asset_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| EmpiricalError::ParseError {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(EmpiricalError::ParseError {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        dates.push(record[0].to_string());
        for (j, cell) in record.iter().enumerate().skip(1) {
            let column = asset_ids[j - 1].clone();
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(EmpiricalError::MissingValue { row, column });
            }
            let value: f64 = cell.parse().map_err(|e: std::num::ParseFloatError| EmpiricalError::ParseError {
                row,
                column: column.clone(),
                message: e.to_string(),
            })?;
            if !value.is_finite() {
                return Err(EmpiricalError::MissingValue { row, column });
            }
            rows.push(value);
        }
    }
    ReturnTable::new(dates, asset_ids, rows)
}

pub fn load_returns_file(path: &Path) -> Result<ReturnTable, EmpiricalError> {
    let file = std::fs::File::open(path)
        .map_err(|e| EmpiricalError::Malformed(format!("{}: {e}", path.display())))?;
    load_returns(std::io::BufReader::new(file))
}

// ─── Differences ────────────────────────────────────────────────────────────

/// Per-asset difference between the resampled and the standard backtest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRecord {
    pub asset_id: String,
    pub d_mean: f64,
    pub d_var: f64,
    pub d_sr: f64,
    pub standard: MomentSummary,
    /// Resampled statistics (averaged when several shuffles are used).
    pub resampled_mean: f64,
    pub resampled_var: f64,
    pub resampled_sr: f64,
    pub se_diff_mean: Option<f64>,
    pub se_diff_var: Option<f64>,
    pub se_diff_sr: Option<f64>,
    pub se_standard_mean: Option<f64>,
    pub se_standard_var: Option<f64>,
    pub se_standard_sr: Option<f64>,
    pub p_mean: Option<f64>,
    pub p_var: Option<f64>,
    pub p_sr: Option<f64>,
    pub bounds: Option<BoundSet>,
    pub dependence: Option<DependenceComponents>,
}

impl DifferenceRecord {
    pub fn differences(&self) -> [f64; 3] {
        [self.d_mean, self.d_var, self.d_sr]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetFailure {
    pub asset_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSet {
    pub records: Vec<DifferenceRecord>,
    pub failures: Vec<AssetFailure>,
}

/// Seed of shuffle `s` for asset `m`.
fn shuffle_seed(seed: u64, m: usize, s: usize) -> u64 {
    rng::derive_seed(seed, &[m as u64, tag::RESAMPLE, s as u64])
}

/// Standard and resampled moments of one series; the resampled side averages
/// the statistics over `shuffles` independent resamples.
fn difference_stats(
    series: &SamplePath,
    cfg: &BacktestConfig,
    scheme: ResampleScheme,
    shuffles: usize,
    seed_of: impl Fn(usize) -> u64,
) -> Result<(MomentSummary, [f64; 3]), BacktestError> {
    let standard = backtest::standard_backtest(series, cfg)?;
    let mut acc = [0.0; 3];
    for s in 0..shuffles {
        let r = backtest::resampled_backtest(series, cfg, scheme, seed_of(s))?;
        acc[0] += r.mu_p;
        acc[1] += r.sigma2_p;
        acc[2] += r.sharpe;
    }
    let k = shuffles as f64;
    Ok((standard, [acc[0] / k, acc[1] / k, acc[2] / k]))
}

/// Univariate differences for every asset of the table. Asset `m` is
/// resampled with seed `derive_seed(seed, [m, RESAMPLE, s])` for shuffle `s`.
/// Per-asset errors are collected in the failure list.
pub fn compute_differences(
    table: &ReturnTable,
    cfg: &BacktestConfig,
    scheme: ResampleScheme,
    seed: u64,
    shuffles: usize,
) -> Result<DifferenceSet, EmpiricalError> {
    if shuffles == 0 {
        return Err(EmpiricalError::InvalidArgument("shuffles must be at least 1".into()));
    }
    cfg.validate().map_err(BacktestError::from)?;
    let outcomes: Vec<Result<DifferenceRecord, AssetFailure>> = (0..table.assets())
        .into_par_iter()
        .map(|m| {
            let id = table.asset_ids[m].clone();
            let path = SamplePath::from_series(&table.column(m), Origin::Historical).expect("validated table");
            difference_stats(&path, cfg, scheme, shuffles, |s| shuffle_seed(seed, m, s))
                .map(|(standard, r)| DifferenceRecord {
                    asset_id: id.clone(),
                    d_mean: r[0] - standard.mu_p,
                    d_var: r[1] - standard.sigma2_p,
                    d_sr: r[2] - standard.sharpe,
                    standard,
                    resampled_mean: r[0],
                    resampled_var: r[1],
                    resampled_sr: r[2],
                    se_diff_mean: None,
                    se_diff_var: None,
                    se_diff_sr: None,
                    se_standard_mean: None,
                    se_standard_var: None,
                    se_standard_sr: None,
                    p_mean: None,
                    p_var: None,
                    p_sr: None,
                    bounds: None,
                    dependence: None,
                })
                .map_err(|e| AssetFailure {
                    asset_id: id,
                    message: e.to_string(),
                })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(DifferenceSet { records, failures })
}

// ─── Stationary bootstrap ───────────────────────────────────────────────────

/// Politis–Romano indices: a uniform start, then each step continues the
/// current block (circularly) with probability `1 − 1/mean_block` or jumps
/// to a fresh uniform start.
pub fn stationary_bootstrap_indices<R: Rng>(len: usize, mean_block: f64, rng: &mut R) -> Vec<usize> {
    let p_new = 1.0 / mean_block;
    let mut out = Vec::with_capacity(len);
    let mut idx = rng.random_range(0..len);
    out.push(idx);
    while out.len() < len {
        idx = if rng.random::<f64>() < p_new {
            rng.random_range(0..len)
        } else {
            (idx + 1) % len
        };
        out.push(idx);
    }
    out
}

/// Default expected block length (months).
pub const DEFAULT_MEAN_BLOCK: f64 = 10.0;
/// Default number of bootstrap replications.
pub const DEFAULT_REPLICATIONS: usize = 999;

fn check_bootstrap_args(len: usize, mean_block: f64, replications: usize) -> Result<(), EmpiricalError> {
    if len < 10 {
        return Err(EmpiricalError::InsufficientData { needed: 10, got: len });
    }
    if !(mean_block >= 1.0) {
        return Err(EmpiricalError::InvalidArgument("mean_block must be at least 1".into()));
    }
    if replications < 100 {
        return Err(EmpiricalError::InvalidArgument("need at least 100 bootstrap replications".into()));
    }
    Ok(())
}

fn replicate_rng(seed: u64, b: usize) -> rand_chacha::ChaCha8Rng {
    rng::derived_rng(seed, &[tag::BOOTSTRAP, b as u64])
}

/// Standard deviation of `statistic` over `replications` stationary-bootstrap
/// pseudo-series. Replicates where the statistic is not finite are dropped.
pub fn stationary_bootstrap_se<F>(
    series: &[f64],
    statistic: F,
    mean_block: f64,
    replications: usize,
    seed: u64,
) -> Result<f64, EmpiricalError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_bootstrap_args(series.len(), mean_block, replications)?;
    let values: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let idx = stationary_bootstrap_indices(series.len(), mean_block, &mut replicate_rng(seed, b));
            let pseudo: Vec<f64> = idx.iter().map(|&i| series[i]).collect();
            statistic(&pseudo)
        })
        .collect();
    let finite: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(EmpiricalError::DegenerateSeries);
    }
    Ok(stats::sample_sd(&finite))
}

/// Outcome of the studentized bootstrap test for the three statistics,
/// ordered `[mean, variance, sharpe]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentizedTest {
    pub d: [f64; 3],
    pub se_diff: [f64; 3],
    pub se_standard: [f64; 3],
    pub p_value: [f64; 3],
    pub replications_used: usize,
}

/// Settings shared by the bootstrap-based inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub replications: usize,
    pub mean_block: f64,
    /// Shuffles averaged per resampled estimate.
    pub shuffles: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replications: DEFAULT_REPLICATIONS,
            mean_block: DEFAULT_MEAN_BLOCK,
            shuffles: 1,
        }
    }
}

/// Studentized bootstrap test of `d = 0` for the mean, variance and Sharpe
/// differences of one asset.
///
/// Each replicate stationary-bootstraps the series, then computes the standard
/// and the resampled backtest on the pseudo-series (with a fresh resample).
/// The observed difference is studentized by the bootstrap standard deviation
/// of the replicate differences and compared, two-sided, with the replicate
/// differences centred at their own mean. `d = 0` exactly gives `p = 1`.
pub fn studentized_difference_test(
    series: &[f64],
    cfg: &BacktestConfig,
    scheme: ResampleScheme,
    settings: &BootstrapSettings,
    seed: u64,
) -> Result<StudentizedTest, EmpiricalError> {
    check_bootstrap_args(series.len(), settings.mean_block, settings.replications)?;
    if settings.shuffles == 0 {
        return Err(EmpiricalError::InvalidArgument("shuffles must be at least 1".into()));
    }
    let path = SamplePath::from_series(series, Origin::Historical).map_err(|e| EmpiricalError::Malformed(e.to_string()))?;
    let observed_seed = rng::derive_seed(seed, &[tag::OBSERVED]);
    let (standard, resampled) = difference_stats(&path, cfg, scheme, settings.shuffles, |s| {
        rng::derive_seed(observed_seed, &[s as u64])
    })
    .map_err(|e| match e {
        BacktestError::DegenerateSeries => EmpiricalError::DegenerateSeries,
        other => other.into(),
    })?;
    let d = [
        resampled[0] - standard.mu_p,
        resampled[1] - standard.sigma2_p,
        resampled[2] - standard.sharpe,
    ];
    test_from_replicates(series, cfg, scheme, settings, seed, d)
}

fn test_from_replicates(
    series: &[f64],
    cfg: &BacktestConfig,
    scheme: ResampleScheme,
    settings: &BootstrapSettings,
    seed: u64,
    d: [f64; 3],
) -> Result<StudentizedTest, EmpiricalError> {
    let replicates: Vec<Option<([f64; 3], [f64; 3])>> = (0..settings.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let idx = stationary_bootstrap_indices(series.len(), settings.mean_block, &mut rng);
            let pseudo: Vec<f64> = idx.iter().map(|&i| series[i]).collect();
            let path = SamplePath::from_series(&pseudo, Origin::Historical).ok()?;
            let rep_seed = rng::derive_seed(seed, &[tag::BOOTSTRAP, b as u64, tag::RESAMPLE]);
            let (standard, r) = difference_stats(&path, cfg, scheme, settings.shuffles, |s| {
                rng::derive_seed(rep_seed, &[s as u64])
            })
            .ok()?;
            let st = [standard.mu_p, standard.sigma2_p, standard.sharpe];
            Some(([r[0] - st[0], r[1] - st[1], r[2] - st[2]], st))
        })
        .collect();
    let kept: Vec<([f64; 3], [f64; 3])> = replicates.into_iter().flatten().collect();
    if kept.len() < settings.replications / 2 {
        return Err(EmpiricalError::DegenerateSeries);
    }

    let mut se_diff = [0.0; 3];
    let mut se_standard = [0.0; 3];
    let mut p_value = [1.0; 3];
    for j in 0..3 {
        let diffs: Vec<f64> = kept.iter().map(|k| k.0[j]).collect();
        let standards: Vec<f64> = kept.iter().map(|k| k.1[j]).collect();
        se_diff[j] = stats::sample_sd(&diffs);
        se_standard[j] = stats::sample_sd(&standards);
        if d[j] == 0.0 {
            continue;
        }
        if !(se_diff[j] > 0.0) {
            p_value[j] = 0.0;
            continue;
        }
        let centre = stats::mean(&diffs);
        let t_obs = (d[j] / se_diff[j]).abs();
        let exceed = diffs
            .iter()
            .filter(|&&x| ((x - centre) / se_diff[j]).abs() >= t_obs)
            .count();
        p_value[j] = (1 + exceed) as f64 / (kept.len() + 1) as f64;
    }
    Ok(StudentizedTest {
        d,
        se_diff,
        se_standard,
        p_value,
        replications_used: kept.len(),
    })
}

/// Fills the inference, bound and dependence fields of each record in place.
/// Asset `m` uses bootstrap seed `derive_seed(seed, [m, BOOTSTRAP])`.
pub fn annotate_records(
    table: &ReturnTable,
    set: &mut DifferenceSet,
    cfg: &BacktestConfig,
    scheme: ResampleScheme,
    settings: &BootstrapSettings,
    seed: u64,
) -> Result<(), EmpiricalError> {
    let index: std::collections::HashMap<&str, usize> =
        table.asset_ids.iter().enumerate().map(|(m, id)| (id.as_str(), m)).collect();
    let annotated: Vec<Result<DifferenceRecord, AssetFailure>> = set
        .records
        .par_iter()
        .map(|rec| {
            let m = index[rec.asset_id.as_str()];
            let series = table.column(m);
            let fail = |e: EmpiricalError| AssetFailure {
                asset_id: rec.asset_id.clone(),
                message: e.to_string(),
            };
            let test = test_from_replicates(
                &series,
                cfg,
                scheme,
                settings,
                rng::derive_seed(seed, &[m as u64, tag::BOOTSTRAP]),
                rec.differences(),
            )
            .map_err(fail)?;
            let bounds = estimate_bounds_from_data(&series, cfg.window, cfg.gamma).map_err(fail)?;
            let dependence = analysis::dependence_components_empirical(&series, cfg.window)
                .map_err(|e| fail(e.into()))?;
            let mut out = rec.clone();
            out.se_diff_mean = Some(test.se_diff[0]);
            out.se_diff_var = Some(test.se_diff[1]);
            out.se_diff_sr = Some(test.se_diff[2]);
            out.se_standard_mean = Some(test.se_standard[0]);
            out.se_standard_var = Some(test.se_standard[1]);
            out.se_standard_sr = Some(test.se_standard[2]);
            out.p_mean = Some(test.p_value[0]);
            out.p_var = Some(test.p_value[1]);
            out.p_sr = Some(test.p_value[2]);
            out.bounds = Some(bounds);
            out.dependence = Some(dependence);
            Ok(out)
        })
        .collect();
    let mut records = Vec::new();
    for a in annotated {
        match a {
            Ok(r) => records.push(r),
            Err(f) => set.failures.push(f),
        }
    }
    set.records = records;
    Ok(())
}

// ─── Bounds and regressions ─────────────────────────────────────────────────

/// Bounds with θ̂ = mean / sd and ψ̂ = lag-1 sample autocorrelation.
pub fn estimate_bounds_from_data(series: &[f64], n: usize, gamma: f64) -> Result<BoundSet, EmpiricalError> {
    if series.len() < n + 2 {
        return Err(EmpiricalError::InsufficientData {
            needed: n + 2,
            got: series.len(),
        });
    }
    let var = stats::sample_variance(series);
    if !(var > 0.0) {
        return Err(EmpiricalError::DegenerateSeries);
    }
    let theta = stats::mean(series) / var.sqrt();
    let psi = stats::lag1_autocorrelation(series);
    Ok(analysis::bounds(theta, psi, gamma, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressors {
    Ttd,
    Wtd,
    Both,
}

impl Regressors {
    pub const ALL: [Regressors; 3] = [Regressors::Ttd, Regressors::Wtd, Regressors::Both];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Ttd => "ttd",
            Self::Wtd => "wtd",
            Self::Both => "both",
        }
    }
}

pub type RegressionSummary = OlsFit;

/// OLS with intercept of `differences` on the chosen dependence components.
pub fn regress_differences(
    differences: &[f64],
    dependence: &[DependenceComponents],
    which: Regressors,
) -> Result<RegressionSummary, EmpiricalError> {
    if differences.len() != dependence.len() {
        return Err(EmpiricalError::InvalidArgument("differences and dependence lengths differ".into()));
    }
    if differences.len() < 3 {
        return Err(EmpiricalError::InsufficientData {
            needed: 3,
            got: differences.len(),
        });
    }
    let ttd: Vec<f64> = dependence.iter().map(|d| d.ttd).collect();
    let wtd: Vec<f64> = dependence.iter().map(|d| d.wtd).collect();
    let xs = match which {
        Regressors::Ttd => vec![ttd],
        Regressors::Wtd => vec![wtd],
        Regressors::Both => vec![ttd, wtd],
    };
    Ok(stats::ols(differences, &xs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEntry {
    pub statistic: String,
    pub regressors: Regressors,
    pub fit: Option<RegressionSummary>,
    pub error: Option<String>,
}

pub const STATISTICS: [&str; 3] = ["mean", "variance", "sharpe"];

/// Regressions of each difference on TTD, WTD and both, over annotated records.
pub fn regression_table(records: &[DifferenceRecord]) -> Vec<RegressionEntry> {
    let usable: Vec<&DifferenceRecord> = records.iter().filter(|r| r.dependence.is_some()).collect();
    let deps: Vec<DependenceComponents> = usable.iter().map(|r| r.dependence.unwrap()).collect();
    let mut out = Vec::new();
    for (j, stat) in STATISTICS.iter().enumerate() {
        let d: Vec<f64> = usable.iter().map(|r| r.differences()[j]).collect();
        for which in Regressors::ALL {
            let res = regress_differences(&d, &deps, which);
            out.push(RegressionEntry {
                statistic: stat.to_string(),
                regressors: which,
                error: res.as_ref().err().map(|e| e.to_string()),
                fit: res.ok(),
            });
        }
    }
    out
}

/// Percentiles of |studentized differences| and rejection shares, per statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentizedSummary {
    pub percentiles: Vec<f64>,
    /// `|d / se_diff|` percentiles, one row per percentile, columns mean/variance/sharpe.
    pub diff_se: Vec<[f64; 3]>,
    /// Share of assets with p < 0.05.
    pub reject_diff: [f64; 3],
    /// `|d / se_standard|` percentiles.
    pub standard_se: Vec<[f64; 3]>,
    /// Share of assets with `|d / se_standard| > 1.96`.
    pub reject_standard: [f64; 3],
    pub assets: usize,
}

pub const REPORT_PERCENTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

pub fn studentized_summary(records: &[DifferenceRecord]) -> StudentizedSummary {
    let usable: Vec<&DifferenceRecord> = records.iter().filter(|r| r.p_sr.is_some()).collect();
    let collect = |f: &dyn Fn(&DifferenceRecord) -> [f64; 3]| -> [Vec<f64>; 3] {
        let mut cols: [Vec<f64>; 3] = Default::default();
        for r in &usable {
            let v = f(r);
            for j in 0..3 {
                if v[j].is_finite() {
                    cols[j].push(v[j]);
                }
            }
        }
        cols
    };
    let z_diff = collect(&|r| {
        let se = [r.se_diff_mean, r.se_diff_var, r.se_diff_sr].map(|s| s.unwrap_or(f64::NAN));
        let d = r.differences();
        [0, 1, 2].map(|j| (d[j] / se[j]).abs())
    });
    let z_std = collect(&|r| {
        let se = [r.se_standard_mean, r.se_standard_var, r.se_standard_sr].map(|s| s.unwrap_or(f64::NAN));
        let d = r.differences();
        [0, 1, 2].map(|j| (d[j] / se[j]).abs())
    });
    let pcts = |cols: &[Vec<f64>; 3]| -> Vec<[f64; 3]> {
        REPORT_PERCENTILES
            .iter()
            .map(|&q| [0, 1, 2].map(|j| stats::percentile(&cols[j], q)))
            .collect()
    };
    let share = |count: usize| count as f64 / usable.len().max(1) as f64;
    let reject_diff = [0, 1, 2].map(|j| {
        share(
            usable
                .iter()
                .filter(|r| [r.p_mean, r.p_var, r.p_sr][j].is_some_and(|p| p < 0.05))
                .count(),
        )
    });
    let reject_standard = [0, 1, 2].map(|j| share(z_std[j].iter().filter(|z| **z > 1.96).count()));
    StudentizedSummary {
        percentiles: REPORT_PERCENTILES.to_vec(),
        diff_se: pcts(&z_diff),
        reject_diff,
        standard_se: pcts(&z_std),
        reject_standard,
        assets: usable.len(),
    }
}

// ─── Pipeline ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmpiricalConfig {
    pub backtest: BacktestConfig,
    pub scheme: ResampleScheme,
    pub bootstrap: BootstrapSettings,
    /// Run the bootstrap inference, bounds and regressions.
    pub inference: bool,
    pub seed: u64,
}

impl Default for EmpiricalConfig {
    fn default() -> Self {
        Self {
            backtest: BacktestConfig::default(),
            scheme: ResampleScheme::IidShuffle,
            bootstrap: BootstrapSettings::default(),
            inference: true,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub records: Vec<DifferenceRecord>,
    pub failures: Vec<AssetFailure>,
    pub regressions: Vec<RegressionEntry>,
    pub studentized: StudentizedSummary,
}

/// Differences, then (optionally) inference, regressions and the summary table.
pub fn run_empirical(table: &ReturnTable, cfg: &EmpiricalConfig) -> Result<EmpiricalReport, EmpiricalError> {
    let mut set = compute_differences(table, &cfg.backtest, cfg.scheme, cfg.seed, cfg.bootstrap.shuffles)?;
    if cfg.inference {
        annotate_records(table, &mut set, &cfg.backtest, cfg.scheme, &cfg.bootstrap, cfg.seed)?;
    }
    let regressions = if cfg.inference { regression_table(&set.records) } else { Vec::new() };
    let studentized = studentized_summary(&set.records);
    Ok(EmpiricalReport {
        records: set.records,
        failures: set.failures,
        regressions,
        studentized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::EstimatorMode;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_series(len: usize, seed: u64, mu: f64, sd: f64) -> Vec<f64> {
        let mut rng = rng::rng_from(seed);
        (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu + sd * z
            })
            .collect()
    }

    #[test]
    fn pipeline_with_and_without_inference() {
        let assets = 3;
        let periods = 120;
        let cols: Vec<Vec<f64>> = (0..assets).map(|m| normal_series(periods, 70 + m as u64, 0.005, 0.04)).collect();
        let rows: Vec<f64> = (0..periods).flat_map(|t| cols.iter().map(move |c| c[t])).collect();
        let dates = (0..periods).map(|t| format!("{}-{:02}", 2000 + t / 12, t % 12 + 1)).collect();
        let ids = (0..assets).map(|m| format!("a{m}")).collect();
        let table = ReturnTable::new(dates, ids, rows).unwrap();
        let mut cfg = EmpiricalConfig {
            backtest: BacktestConfig::new(24, 10.0, EstimatorMode::RollingSample),
            bootstrap: BootstrapSettings {
                replications: 199,
                mean_block: 5.0,
                shuffles: 1,
            },
            ..EmpiricalConfig::default()
        };
        let full = run_empirical(&table, &cfg).unwrap();
        assert_eq!(full.records.len(), assets);
        assert_eq!(full.regressions.len(), 9);
        assert!(full.records.iter().all(|r| r.p_sr.is_some() && r.dependence.is_some()));
        let again = run_empirical(&table, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&full).unwrap(), serde_json::to_string(&again).unwrap());

        cfg.inference = false;
        let bare = run_empirical(&table, &cfg).unwrap();
        assert!(bare.regressions.is_empty());
        assert!(bare.records.iter().all(|r| r.p_sr.is_none()));
        assert_eq!(bare.records[0].d_sr, full.records[0].d_sr);
    }

    #[test]
    fn loads_well_formed_table() {
        let csv = "date,a,b\n2000-01,0.01,0.02\n2000-02,-0.01,0.00\n2000-03,0.03,-0.02\n";
        let t = load_returns(csv.as_bytes()).unwrap();
        assert_eq!((t.periods(), t.assets()), (3, 2));
        assert_eq!(t.column(1), vec![0.02, 0.0, -0.02]);
        assert_eq!(t.asset_ids, vec!["a", "b"]);
    }

    #[test]
    fn blank_cell_is_missing_value() {
        let csv = "date,a,b\n2000-01,0.01,0.02\n2000-02,,0.00\n";
        assert_eq!(
            load_returns(csv.as_bytes()),
            Err(EmpiricalError::MissingValue {
                row: 2,
                column: "a".into()
            })
        );
    }

    #[test]
    fn out_of_order_dates_are_rejected() {
        let csv = "date,a\n2000-02,0.01\n2000-01,0.02\n";
        assert!(matches!(
            load_returns(csv.as_bytes()),
            Err(EmpiricalError::NonMonotoneDates { row: 2, .. })
        ));
        let bad = "date,a\n2000-13,0.01\n2001-01,0.02\n";
        assert!(matches!(load_returns(bad.as_bytes()), Err(EmpiricalError::ParseError { row: 1, .. })));
        let text = "date,a\n2000-01,abc\n2000-02,0.02\n";
        assert!(matches!(load_returns(text.as_bytes()), Err(EmpiricalError::ParseError { row: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let csv = "date,a,b\n2000-01,0.01,0.02\n2000-02,-0.01,0.00\n";
        let t = load_returns(csv.as_bytes()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(load_returns(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn identity_differences_are_zero() {
        let rows: Vec<f64> = normal_series(400, 1, 0.005, 0.05);
        let dates: Vec<String> = (0..200).map(|i| format!("{}-{:02}", 1950 + i / 12, i % 12 + 1)).collect();
        let table = ReturnTable::new(dates, vec!["a".into(), "b".into()], rows).unwrap();
        let cfg = BacktestConfig::default();
        let set = compute_differences(&table, &cfg, ResampleScheme::Identity, 3, 1).unwrap();
        assert_eq!(set.records.len(), 2);
        for r in &set.records {
            assert_eq!(r.differences(), [0.0; 3]);
        }
    }

    #[test]
    fn bootstrap_se_of_constant_mean_is_zero() {
        let xs = vec![0.02; 50];
        assert_eq!(stationary_bootstrap_se(&xs, stats::mean, 5.0, 200, 1).unwrap(), 0.0);
        assert!(stationary_bootstrap_se(&xs[..9], stats::mean, 5.0, 200, 1).is_err());
        assert!(stationary_bootstrap_se(&xs, stats::mean, 0.5, 200, 1).is_err());
    }

    #[test]
    fn bootstrap_se_of_iid_mean() {
        let xs = normal_series(10_000, 8, 0.0, 1.0);
        let se = stationary_bootstrap_se(&xs, stats::mean, 10.0, 400, 2).unwrap();
        assert!((se / 0.01 - 1.0).abs() < 0.1, "{se}");
        assert_eq!(se, stationary_bootstrap_se(&xs, stats::mean, 10.0, 400, 2).unwrap());
    }

    #[test]
    fn stationary_indices_have_expected_block_length() {
        let mut rng = rng::rng_from(4);
        let idx = stationary_bootstrap_indices(100_000, 8.0, &mut rng);
        let breaks = idx.windows(2).filter(|w| w[1] != (w[0] + 1) % 100_000).count();
        let mean_len = idx.len() as f64 / (breaks + 1) as f64;
        assert!((mean_len - 8.0).abs() < 0.3, "{mean_len}");
    }

    #[test]
    fn identity_test_has_unit_p_values() {
        let xs = normal_series(240, 3, 0.01, 0.05);
        let cfg = BacktestConfig::default();
        let settings = BootstrapSettings {
            replications: 100,
            ..Default::default()
        };
        let t = studentized_difference_test(&xs, &cfg, ResampleScheme::Identity, &settings, 1).unwrap();
        assert_eq!(t.p_value, [1.0; 3]);
    }

    #[test]
    fn studentized_test_is_deterministic() {
        let xs = normal_series(240, 5, 0.01, 0.05);
        let cfg = BacktestConfig::new(60, 100.0, EstimatorMode::RollingSample);
        let settings = BootstrapSettings {
            replications: 150,
            ..Default::default()
        };
        let a = studentized_difference_test(&xs, &cfg, ResampleScheme::IidShuffle, &settings, 9).unwrap();
        let b = studentized_difference_test(&xs, &cfg, ResampleScheme::IidShuffle, &settings, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.p_value.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(a.se_diff.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn white_noise_bounds_are_small() {
        let xs = normal_series(100_000, 6, 0.0, 0.05);
        let b = estimate_bounds_from_data(&xs, 60, 100.0).unwrap();
        assert!(b.psi.abs() < 0.01);
        assert!(b.mean_bound.abs() < 1e-4);
        assert_eq!(estimate_bounds_from_data(&[0.01; 100], 60, 100.0), Err(EmpiricalError::DegenerateSeries));
        assert!(matches!(
            estimate_bounds_from_data(&xs[..61], 60, 100.0),
            Err(EmpiricalError::InsufficientData { .. })
        ));
    }

    #[test]
    fn regression_on_exact_line() {
        let deps: Vec<DependenceComponents> = (0..10)
            .map(|i| DependenceComponents {
                ttd: i as f64 * 1e-5,
                wtd: (i * i) as f64 * 1e-5,
            })
            .collect();
        let d: Vec<f64> = deps.iter().map(|c| 0.001 - 3.0 * c.ttd).collect();
        let fit = regress_differences(&d, &deps, Regressors::Ttd).unwrap();
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        let both = regress_differences(&d, &deps, Regressors::Both).unwrap();
        assert!((both.slopes[0] + 3.0).abs() < 1e-6);
        assert!(regress_differences(&d[..2], &deps[..2], Regressors::Ttd).is_err());
    }
}
