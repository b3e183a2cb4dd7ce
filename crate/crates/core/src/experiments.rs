//! Simulation studies: the bias cross-section with bounds, dependence and
//! standardized-bias tables, the blocksize and dimension sweeps, and the
//! mean/variance bias coupling.
//!
//! Seeds: asset `m` of a cross-section uses `derive_seed(master, [m])` as its
//! Monte Carlo seed. The dimension sweep uses `derive_seed(master, [0])`, so
//! its `M = 1` point reproduces asset 0 of the cross-section exactly.

use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, BiasEstimate, BoundSet, DependenceComponents};
use crate::backtest::ResampleScheme;
use crate::dgp::{AssetSpec, DgpError, ObservableMoments};
use crate::portfolio::{BacktestConfig, EstimatorMode};
use crate::rng::{self, tag};
use crate::stats::{self, OlsFit, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {total} (asset, path) runs failed, above the 1% budget")]
    FailureBudgetExceeded { failed: usize, total: usize },
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ─── Universe ───────────────────────────────────────────────────────────────

/// Generator for a synthetic cross-section resembling a panel of monthly
/// factor returns. Moments are annual where named so.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniverseRecipe {
    pub count: usize,
    pub mean_annual: f64,
    pub mean_annual_sd: f64,
    /// Cross-sectional average annual volatility.
    pub sd_annual: f64,
    /// Dispersion of log volatility.
    pub sd_log_dispersion: f64,
    pub psi_mean: f64,
    pub psi_sd: f64,
    pub svr_mean: f64,
    /// Beta concentration `a + b` of the signal-variance ratio.
    pub svr_concentration: f64,
    /// Draws are rejected unless `|ψ| / svr ≤ max_phi`.
    pub max_phi: f64,
    pub garch_alpha: (f64, f64),
    pub garch_beta: (f64, f64),
}

impl Default for UniverseRecipe {
    fn default() -> Self {
        Self {
            count: 153,
            mean_annual: 0.027,
            mean_annual_sd: 0.0575,
            sd_annual: 0.33,
            sd_log_dispersion: 0.1,
            psi_mean: 0.08,
            psi_sd: 0.08,
            svr_mean: 0.39,
            svr_concentration: 10.0,
            max_phi: 0.95,
            garch_alpha: (0.03, 0.15),
            garch_beta: (0.75, 0.92),
        }
    }
}

impl UniverseRecipe {
    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.into()));
        if self.count == 0 {
            return bad("universe count must be positive");
        }
        if !(self.svr_mean > 0.0 && self.svr_mean < 1.0 && self.svr_concentration > 0.0) {
            return bad("svr_mean must lie in (0, 1) with positive concentration");
        }
        if !(self.max_phi > 0.0 && self.max_phi < 1.0) {
            return bad("max_phi must lie in (0, 1)");
        }
        if !(self.sd_annual > 0.0 && self.sd_log_dispersion >= 0.0 && self.psi_sd >= 0.0 && self.mean_annual_sd >= 0.0) {
            return bad("dispersions must be non-negative and sd_annual positive");
        }
        let (a0, a1) = self.garch_alpha;
        let (b0, b1) = self.garch_beta;
        if !(0.0 <= a0 && a0 <= a1 && 0.0 <= b0 && b0 <= b1 && b1 < crate::dgp::GARCH_PERSISTENCE_RANGE.1) {
            return bad("garch ranges must be ordered, non-negative, with beta below 0.98");
        }
        Ok(())
    }
}

fn uniform_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws the universe from one stream seeded by `derive_seed(seed, [UNIVERSE])`.
/// Every asset carries a calibrated GARCH block; the constant-variance
/// regime drops it.
pub fn generate_universe(recipe: &UniverseRecipe, seed: u64) -> Result<Vec<AssetSpec>, ExperimentError> {
    recipe.validate()?;
    let mut rng = rng::derived_rng(seed, &[tag::UNIVERSE]);
    let mean_dist = Normal::new(recipe.mean_annual / 12.0, recipe.mean_annual_sd / 12f64.sqrt())
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let log_sd = recipe.sd_log_dispersion;
    let vol_dist = LogNormal::new(recipe.sd_annual.ln() - log_sd * log_sd / 2.0, log_sd)
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let psi_dist =
        Normal::new(recipe.psi_mean, recipe.psi_sd).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let c = recipe.svr_concentration;
    let svr_dist = Beta::new(recipe.svr_mean * c, (1.0 - recipe.svr_mean) * c)
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;

    let mut specs = Vec::with_capacity(recipe.count);
    for m in 0..recipe.count {
        let mu = mean_dist.sample(&mut rng);
        let vol_annual = vol_dist.sample(&mut rng);
        let sigma2_r = vol_annual * vol_annual / 12.0;
        let (psi, svr) = loop {
            let psi: f64 = psi_dist.sample(&mut rng);
            let svr: f64 = svr_dist.sample(&mut rng);
            if svr > 0.0 && svr < 1.0 && psi.abs() <= recipe.max_phi * svr && psi.abs() < 1.0 {
                break (psi, svr);
            }
        };
        let alpha = uniform_in(&mut rng, recipe.garch_alpha);
        let beta = uniform_in(&mut rng, recipe.garch_beta);
        let obs = ObservableMoments::new(mu, sigma2_r, psi, svr)?;
        specs.push(AssetSpec::new(format!("asset_{m:03}"), obs)?.with_garch(alpha, beta)?);
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniverseSource {
    Recipe(UniverseRecipe),
    Assets(Vec<AssetSpec>),
}

impl Default for UniverseSource {
    fn default() -> Self {
        Self::Recipe(UniverseRecipe::default())
    }
}

impl UniverseSource {
    pub fn resolve(&self, seed: u64) -> Result<Vec<AssetSpec>, ExperimentError> {
        match self {
            Self::Recipe(r) => generate_universe(r, seed),
            Self::Assets(a) if a.is_empty() => Err(ExperimentError::InvalidConfig("empty asset list".into())),
            Self::Assets(a) => Ok(a.clone()),
        }
    }
}

// ─── Scenario ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Constant,
    Garch,
}

impl NoiseKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Garch => "garch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSetting {
    Constant,
    Garch,
    Both,
}

impl NoiseSetting {
    pub fn kinds(&self) -> Vec<NoiseKind> {
        match self {
            Self::Constant => vec![NoiseKind::Constant],
            Self::Garch => vec![NoiseKind::Garch],
            Self::Both => vec![NoiseKind::Constant, NoiseKind::Garch],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub dimension: Option<Vec<usize>>,
    pub blocksize: Option<Vec<usize>>,
    /// Weight estimator used by the dimension sweep.
    pub dimension_estimator: EstimatorMode,
    /// Path count override for the sweeps (defaults to the scenario's).
    pub paths: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dimension: Some(vec![1, 2, 5, 10, 20, 40]),
            blocksize: Some(vec![1, 2, 5, 10, 20]),
            dimension_estimator: EstimatorMode::RollingDiagonal,
            paths: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub universe: UniverseSource,
    pub paths: usize,
    pub length: usize,
    pub backtest: BacktestConfig,
    pub noise: NoiseSetting,
    pub schemes: Vec<ResampleScheme>,
    pub sweeps: SweepConfig,
    pub master_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            universe: UniverseSource::default(),
            paths: 1000,
            length: 480,
            backtest: BacktestConfig::default(),
            noise: NoiseSetting::Both,
            schemes: vec![ResampleScheme::IidShuffle],
            sweeps: SweepConfig::default(),
            master_seed: 20_240_601,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.paths < 2 {
            return bad("paths must be at least 2".into());
        }
        if self.length <= self.backtest.window {
            return bad(format!(
                "length {} must exceed the window {}",
                self.length, self.backtest.window
            ));
        }
        self.backtest
            .validate()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        if self.schemes.is_empty() {
            return bad("schemes must not be empty".into());
        }
        for s in &self.schemes {
            if let ResampleScheme::Block(b) = s {
                if *b == 0 || *b > self.length {
                    return bad(format!("block length {b} outside 1..={}", self.length));
                }
            }
        }
        if let Some(g) = &self.sweeps.dimension {
            if g.is_empty() || g.contains(&0) {
                return bad("dimension grid must be non-empty and positive".into());
            }
        }
        if let Some(g) = &self.sweeps.blocksize {
            if g.is_empty() || !g.contains(&1) || g.iter().any(|&b| b == 0 || b > self.length) {
                return bad("blocksize grid must be non-empty, contain 1, and fit the path length".into());
            }
        }
        if self.sweeps.paths.is_some_and(|k| k < 2) {
            return bad("sweep paths must be at least 2".into());
        }
        if let UniverseSource::Recipe(r) = &self.universe {
            r.validate()?;
        }
        Ok(())
    }

    fn sweep_paths(&self) -> usize {
        self.sweeps.paths.unwrap_or(self.paths)
    }
}

fn specs_for(universe: &[AssetSpec], noise: NoiseKind) -> Result<Vec<AssetSpec>, ExperimentError> {
    match noise {
        NoiseKind::Constant => Ok(universe.iter().map(AssetSpec::without_garch).collect()),
        NoiseKind::Garch => universe
            .iter()
            .map(|s| {
                if s.garch.is_some() {
                    Ok(s.clone())
                } else {
                    Err(ExperimentError::InvalidConfig(format!(
                        "asset '{}' has no garch block but the scenario requests GARCH noise",
                        s.id
                    )))
                }
            })
            .collect(),
    }
}

pub fn asset_seed(master: u64, m: usize) -> u64 {
    rng::derive_seed(master, &[m as u64])
}

// ─── Cross-section ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRow {
    pub asset_id: String,
    pub theta: f64,
    pub psi: f64,
    pub svr: f64,
    pub phi: f64,
    pub estimate: BiasEstimate,
    pub bounds: BoundSet,
    pub dependence: DependenceComponents,
    pub ratio_mean: f64,
    pub ratio_var: f64,
    pub ratio_sr: f64,
    /// `|bias| / se_standard` per statistic.
    pub std_mean: f64,
    pub std_var: f64,
    pub std_sr: f64,
    pub theory_mean: f64,
    pub theory_var: f64,
    pub theory_sr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub percentiles: Vec<f64>,
    /// Rows per percentile, columns mean / variance / sharpe.
    pub values: Vec<[f64; 3]>,
}

impl PercentileTable {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn at(&self, q: f64, j: usize) -> Option<f64> {
        self.percentiles.iter().position(|p| *p == q).map(|i| self.values[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Entry {
    pub statistic: String,
    pub regressor: String,
    pub fit: Option<OlsFit>,
    pub error: Option<String>,
}

impl R2Entry {
    pub fn r2(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.r2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetFailure {
    pub asset_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionReport {
    pub noise: NoiseKind,
    pub scheme: ResampleScheme,
    pub rows: Vec<AssetRow>,
    pub percentiles: PercentileTable,
    pub r2: Vec<R2Entry>,
    pub coupling: Option<OlsFit>,
    pub failures: Vec<AssetFailure>,
    pub failed_runs: usize,
    pub total_runs: usize,
}

impl CrossSectionReport {
    pub fn r2_of(&self, statistic: &str, regressor: &str) -> Option<f64> {
        self.r2
            .iter()
            .find(|e| e.statistic == statistic && e.regressor == regressor)
            .and_then(R2Entry::r2)
    }
}

pub const TABLE_PERCENTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
const STATS: [&str; 3] = ["mean", "variance", "sharpe"];

fn build_row(spec: &AssetSpec, cfg: &BacktestConfig, estimate: BiasEstimate) -> AssetRow {
    let theta = spec.theta();
    let psi = spec.psi();
    let bounds = analysis::bounds(theta, psi, cfg.gamma, cfg.window);
    AssetRow {
        asset_id: spec.id.clone(),
        theta,
        psi,
        svr: spec.svr(),
        phi: spec.latent.phi,
        dependence: analysis::dependence_components_param(spec, cfg.window),
        ratio_mean: analysis::abs_ratio(estimate.bias_mean, bounds.mean_bound),
        ratio_var: analysis::abs_ratio(estimate.bias_var, bounds.var_bound),
        ratio_sr: analysis::abs_ratio(estimate.bias_sr, bounds.sr_numerical),
        std_mean: estimate.standardized_mean().abs(),
        std_var: estimate.standardized_var().abs(),
        std_sr: estimate.standardized_sr().abs(),
        theory_mean: analysis::theoretical_bias_mean(spec, cfg.window, cfg.gamma),
        theory_var: analysis::theoretical_bias_var(spec, cfg.window, cfg.gamma),
        theory_sr: analysis::theoretical_bias_sr(spec, cfg.window).ok(),
        bounds,
        estimate,
    }
}

/// Percentiles of the absolute standardized biases.
pub fn percentile_table(rows: &[AssetRow]) -> PercentileTable {
    let cols: [Vec<f64>; 3] = [
        rows.iter().map(|r| r.std_mean).filter(|v| v.is_finite()).collect(),
        rows.iter().map(|r| r.std_var).filter(|v| v.is_finite()).collect(),
        rows.iter().map(|r| r.std_sr).filter(|v| v.is_finite()).collect(),
    ];
    PercentileTable {
        percentiles: TABLE_PERCENTILES.to_vec(),
        values: TABLE_PERCENTILES
            .iter()
            .map(|&q| [0, 1, 2].map(|j| stats::percentile(&cols[j], q)))
            .collect(),
    }
}

/// R² of each bias regressed on TTD and on WTD across assets.
pub fn r2_table(rows: &[AssetRow]) -> Vec<R2Entry> {
    let biases = [
        rows.iter().map(|r| r.estimate.bias_mean).collect::<Vec<_>>(),
        rows.iter().map(|r| r.estimate.bias_var).collect(),
        rows.iter().map(|r| r.estimate.bias_sr).collect(),
    ];
    let ttd: Vec<f64> = rows.iter().map(|r| r.dependence.ttd).collect();
    let wtd: Vec<f64> = rows.iter().map(|r| r.dependence.wtd).collect();
    let mut out = Vec::new();
    for (j, stat) in STATS.iter().enumerate() {
        for (name, x) in [("ttd", &ttd), ("wtd", &wtd)] {
            let res = stats::ols(&biases[j], std::slice::from_ref(x));
            out.push(R2Entry {
                statistic: stat.to_string(),
                regressor: name.to_string(),
                error: res.as_ref().err().map(|e| e.to_string()),
                fit: res.ok(),
            });
        }
    }
    out
}

/// OLS of `bias_var` on `bias_mean` (intercept included).
pub fn coupling_fit(bias_mean: &[f64], bias_var: &[f64]) -> Result<OlsFit, ExperimentError> {
    if bias_mean.len() < 2 || bias_mean.len() != bias_var.len() {
        return Err(ExperimentError::InvalidConfig("coupling needs at least two paired biases".into()));
    }
    Ok(stats::ols(bias_var, &[bias_mean.to_vec()])?)
}

pub fn coupling_report(report: &CrossSectionReport) -> Result<OlsFit, ExperimentError> {
    let m: Vec<f64> = report.rows.iter().map(|r| r.estimate.bias_mean).collect();
    let v: Vec<f64> = report.rows.iter().map(|r| r.estimate.bias_var).collect();
    coupling_fit(&m, &v)
}

fn check_budget(failed: usize, total: usize) -> Result<(), ExperimentError> {
    if failed as f64 > analysis::FAILURE_BUDGET * total as f64 {
        return Err(ExperimentError::FailureBudgetExceeded { failed, total });
    }
    Ok(())
}

/// Runs the cross-section for each noise regime and scheme in the config.
pub fn run_bias_cross_section(cfg: &ScenarioConfig) -> Result<Vec<CrossSectionReport>, ExperimentError> {
    cfg.validate()?;
    let universe = cfg.universe.resolve(cfg.master_seed)?;
    let mut reports = Vec::new();
    for noise in cfg.noise.kinds() {
        let specs = specs_for(&universe, noise)?;
        let outcomes: Vec<Result<Vec<BiasEstimate>, AnalysisError>> = specs
            .par_iter()
            .enumerate()
            .map(|(m, spec)| {
                analysis::mc_bias_schemes(
                    std::slice::from_ref(spec),
                    &cfg.backtest,
                    cfg.paths,
                    cfg.length,
                    asset_seed(cfg.master_seed, m),
                    &cfg.schemes,
                )
            })
            .collect();
        let total = specs.len() * cfg.paths;
        let mut failed = 0;
        let mut failures = Vec::new();
        for (spec, o) in specs.iter().zip(&outcomes) {
            match o {
                Ok(est) => failed += est[0].failed_paths,
                Err(e) => {
                    failed += cfg.paths;
                    failures.push(AssetFailure {
                        asset_id: spec.id.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
        check_budget(failed, total)?;
        for (i, &scheme) in cfg.schemes.iter().enumerate() {
            let rows: Vec<AssetRow> = specs
                .iter()
                .zip(&outcomes)
                .filter_map(|(spec, o)| o.as_ref().ok().map(|est| build_row(spec, &cfg.backtest, est[i].clone())))
                .collect();
            let mut report = CrossSectionReport {
                noise,
                scheme,
                percentiles: percentile_table(&rows),
                r2: r2_table(&rows),
                coupling: None,
                rows,
                failures: failures.clone(),
                failed_runs: failed,
                total_runs: total,
            };
            report.coupling = coupling_report(&report).ok();
            reports.push(report);
        }
    }
    Ok(reports)
}

// ─── Blocksize sweep ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksizePoint {
    pub b: usize,
    /// Cross-sectional mean of |bias_sr|.
    pub mean_abs_bias_sr: f64,
    pub se: f64,
    /// `mean_abs_bias_sr` divided by its value at `b = 1`.
    pub normalized: f64,
    pub normalized_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksizeReport {
    pub noise: NoiseKind,
    pub points: Vec<BlocksizePoint>,
    pub assets: usize,
    pub paths: usize,
    pub failures: Vec<AssetFailure>,
}

impl BlocksizeReport {
    pub fn at(&self, b: usize) -> Option<&BlocksizePoint> {
        self.points.iter().find(|p| p.b == b)
    }
}

/// Mean |Sharpe bias| across the universe for each block length, on the same
/// simulated paths as the cross-section (constant noise unless the scenario
/// is GARCH-only). The SE treats assets as independent:
/// `sqrt(Σ se_m²) / N`.
pub fn run_blocksize_sweep(cfg: &ScenarioConfig) -> Result<BlocksizeReport, ExperimentError> {
    cfg.validate()?;
    let grid = cfg
        .sweeps
        .blocksize
        .clone()
        .ok_or_else(|| ExperimentError::InvalidConfig("no blocksize grid".into()))?;
    let noise = cfg.noise.kinds()[0];
    let specs = specs_for(&cfg.universe.resolve(cfg.master_seed)?, noise)?;
    let schemes: Vec<ResampleScheme> = grid.iter().map(|&b| ResampleScheme::Block(b)).collect();
    let paths = cfg.sweep_paths();
    let outcomes: Vec<Result<Vec<BiasEstimate>, AnalysisError>> = specs
        .par_iter()
        .enumerate()
        .map(|(m, spec)| {
            analysis::mc_bias_schemes(
                std::slice::from_ref(spec),
                &cfg.backtest,
                paths,
                cfg.length,
                asset_seed(cfg.master_seed, m),
                &schemes,
            )
        })
        .collect();
    let mut failures = Vec::new();
    let mut failed = 0;
    let mut ok = Vec::new();
    for (spec, o) in specs.iter().zip(outcomes) {
        match o {
            Ok(est) => {
                failed += est[0].failed_paths;
                ok.push(est);
            }
            Err(e) => {
                failed += paths;
                failures.push(AssetFailure {
                    asset_id: spec.id.clone(),
                    message: e.to_string(),
                });
            }
        }
    }
    check_budget(failed, specs.len() * paths)?;
    let count = ok.len() as f64;
    let raw: Vec<(f64, f64)> = (0..grid.len())
        .map(|i| {
            let mean = ok.iter().map(|e| e[i].bias_sr.abs()).sum::<f64>() / count;
            let se = ok.iter().map(|e| e[i].se_sr * e[i].se_sr).sum::<f64>().sqrt() / count;
            (mean, se)
        })
        .collect();
    let base = grid.iter().position(|&b| b == 1).map(|i| raw[i].0).unwrap_or(f64::NAN);
    Ok(BlocksizeReport {
        noise,
        points: grid
            .iter()
            .zip(&raw)
            .map(|(&b, &(mean, se))| BlocksizePoint {
                b,
                mean_abs_bias_sr: mean,
                se,
                normalized: mean / base,
                normalized_se: se / base,
            })
            .collect(),
        assets: ok.len(),
        paths,
        failures,
    })
}

// ─── Dimension sweep ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionPoint {
    pub m: usize,
    pub estimate: BiasEstimate,
    pub std_mean: f64,
    pub std_var: f64,
    pub std_sr: f64,
    /// Monte Carlo SE of `std_sr` (`se_sr / se_standard_sr`).
    pub std_sr_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub noise: NoiseKind,
    pub estimator: EstimatorMode,
    pub points: Vec<DimensionPoint>,
    pub paths: usize,
}

impl DimensionReport {
    pub fn at(&self, m: usize) -> Option<&DimensionPoint> {
        self.points.iter().find(|p| p.m == m)
    }
}

/// Standardized biases of the portfolio of the first `M` universe assets, for
/// each `M` in the grid. Asset order is the universe order, so each `M`
/// nests the previous; all points share the seed `derive_seed(master, [0])`.
pub fn run_dimension_sweep(cfg: &ScenarioConfig) -> Result<DimensionReport, ExperimentError> {
    cfg.validate()?;
    let grid = cfg
        .sweeps
        .dimension
        .clone()
        .ok_or_else(|| ExperimentError::InvalidConfig("no dimension grid".into()))?;
    let noise = cfg.noise.kinds()[0];
    let specs = specs_for(&cfg.universe.resolve(cfg.master_seed)?, noise)?;
    let max_m = *grid.iter().max().expect("non-empty grid");
    if max_m > specs.len() {
        return Err(ExperimentError::InvalidConfig(format!(
            "dimension {max_m} exceeds the universe size {}",
            specs.len()
        )));
    }
    let scheme = cfg.schemes[0];
    let mut bt = cfg.backtest.clone();
    bt.estimator = cfg.sweeps.dimension_estimator.clone();
    let paths = cfg.sweep_paths();
    let mut points = Vec::with_capacity(grid.len());
    for &m in &grid {
        let mut mcfg = bt.clone();
        if let EstimatorMode::KnownCovariance(_) = mcfg.estimator {
            let vars: Vec<f64> = specs[..m].iter().map(|s| s.observables.sigma2_r).collect();
            mcfg.estimator = EstimatorMode::known_diagonal(&vars);
        }
        let est = analysis::mc_bias(&specs[..m], &mcfg, paths, cfg.length, asset_seed(cfg.master_seed, 0), scheme)?;
        points.push(DimensionPoint {
            m,
            std_mean: est.standardized_mean().abs(),
            std_var: est.standardized_var().abs(),
            std_sr: est.standardized_sr().abs(),
            std_sr_se: est.se_sr / est.se_standard_sr,
            estimate: est,
        });
    }
    Ok(DimensionReport {
        noise,
        estimator: bt.estimator,
        points,
        paths,
    })
}

// ─── Worker pools ───────────────────────────────────────────────────────────

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "RESAMPLE_LAB_THREADS";

pub fn workers_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f` on a dedicated pool of `workers` threads (the rayon default when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            universe: UniverseSource::Recipe(UniverseRecipe {
                count: 6,
                ..Default::default()
            }),
            paths: 20,
            length: 200,
            sweeps: SweepConfig {
                dimension: Some(vec![1, 3]),
                blocksize: Some(vec![1, 5]),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn universe_respects_recipe() {
        let specs = generate_universe(&UniverseRecipe::default(), 1).unwrap();
        assert_eq!(specs.len(), 153);
        for s in &specs {
            assert!(s.latent.phi.abs() <= 0.95 + 1e-12);
            let g = s.garch.unwrap();
            let sum = g.alpha + g.beta;
            assert!((0.74 - 1e-12..=0.98 + 1e-12).contains(&sum));
        }
        let mean_psi = specs.iter().map(|s| s.psi()).sum::<f64>() / 153.0;
        assert!((mean_psi - 0.08).abs() < 0.03, "{mean_psi}");
        assert_eq!(specs, generate_universe(&UniverseRecipe::default(), 1).unwrap());
    }

    #[test]
    fn scenario_json_round_trip() {
        let cfg = ScenarioConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&json).unwrap(), cfg);
        let partial: ScenarioConfig = serde_json::from_str(r#"{"paths": 50, "noise": "garch"}"#).unwrap();
        assert_eq!(partial.paths, 50);
        assert_eq!(partial.noise, NoiseSetting::Garch);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut cfg = small_config();
        cfg.paths = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.sweeps.blocksize = Some(vec![2, 5]);
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.length = 60;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cross_section_shapes() {
        let reports = run_bias_cross_section(&small_config()).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.rows.len(), 6);
            for j in 0..3 {
                let col = r.percentiles.column(j);
                assert!(col.windows(2).all(|w| w[0] <= w[1]));
            }
            assert_eq!(r.r2.len(), 6);
        }
    }

    #[test]
    fn dimension_sweep_nests_cross_section() {
        let mut cfg = small_config();
        cfg.noise = NoiseSetting::Constant;
        let cs = run_bias_cross_section(&cfg).unwrap();
        let dim = run_dimension_sweep(&cfg).unwrap();
        assert_eq!(dim.at(1).unwrap().estimate, cs[0].rows[0].estimate);
    }

    #[test]
    fn blocksize_sweep_is_normalized() {
        let rep = run_blocksize_sweep(&small_config()).unwrap();
        assert_eq!(rep.at(1).unwrap().normalized, 1.0);
        assert_eq!(rep.points.len(), 2);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = small_config();
        let one = with_workers(Some(1), || run_bias_cross_section(&cfg).unwrap());
        let three = with_workers(Some(3), || run_bias_cross_section(&cfg).unwrap());
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&three).unwrap());
    }

    #[test]
    fn two_point_coupling_is_exact() {
        let fit = coupling_fit(&[-1e-4, -2e-4], &[-1e-6, -3e-6]).unwrap();
        assert_eq!(fit.r2, 1.0);
    }
}
