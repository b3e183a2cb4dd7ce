//! Closed-form sums, exact bias expressions, bounds, dependence components,
//! and Monte Carlo bias estimation.
//!
//! Notation: `s = σ_μ²/σ_R²` is the signal-variance ratio, `φ` the premium
//! persistence, `θ = μ/σ_R` the asset Sharpe ratio, `ψ = φ·s` the lag-1 return
//! autocorrelation, `n` the rolling window and `γ` the risk aversion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{self, BacktestError, ResampleScheme};
use crate::dgp::{self, AssetSpec, DgpError};
use crate::portfolio::BacktestConfig;
use crate::rng::{self, tag};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("|theta| = {0} is too close to zero")]
    ThetaNearZero(f64),
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("{failed} of {total} Monte Carlo paths failed, above the 1% budget (first error: {first})")]
    FailureBudgetExceeded {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
}

const THETA_EPS: f64 = 1e-8;

// ─── Closed-form sums ───────────────────────────────────────────────────────

/// `A_{n,φ} = (1/n) Σ_{k=1..n} φ^k = φ(1−φⁿ) / (n(1−φ))`.
pub fn sum_a(n: usize, phi: f64) -> f64 {
    if phi == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    phi * (1.0 - phi.powi(n as i32)) / (nf * (1.0 - phi))
}

/// `B_{n,φ} = (1/n²) Σ_i Σ_{j≠i} φ^{|i−j|}
///          = 2φ/(n(1−φ)) − 2φ(1−φⁿ)/(n²(1−φ)²)`.
pub fn sum_b(n: usize, phi: f64) -> f64 {
    if phi == 0.0 || n <= 1 {
        return 0.0;
    }
    let nf = n as f64;
    let q = 1.0 - phi;
    2.0 * phi / (nf * q) - 2.0 * phi * (1.0 - phi.powi(n as i32)) / (nf * nf * q * q)
}

/// `R_n = B/A = 2/(1−φⁿ) − 2/(n(1−φ))`; zero at `n = 1`.
pub fn ratio_r(n: usize, phi: f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    2.0 / (1.0 - phi.powi(n as i32)) - 2.0 / (n as f64 * (1.0 - phi))
}

// ─── Exact biases ───────────────────────────────────────────────────────────

/// Parameters entering the exact bias formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormulaInputs {
    pub theta: f64,
    /// Signal-variance ratio `σ_μ²/σ_R²`.
    pub svr: f64,
    pub phi: f64,
}

impl FormulaInputs {
    pub fn new(theta: f64, svr: f64, phi: f64) -> Self {
        Self { theta, svr, phi }
    }

    pub fn from_spec(spec: &AssetSpec) -> Self {
        Self {
            theta: spec.theta(),
            svr: spec.svr(),
            phi: spec.latent.phi,
        }
    }

    pub fn psi(&self) -> f64 {
        self.phi * self.svr
    }
}

/// `−(s/γ)·A`.
pub fn bias_mean(p: &FormulaInputs, n: usize, gamma: f64) -> f64 {
    -(p.svr / gamma) * sum_a(n, p.phi)
}

/// `−(1/γ²)[(θ²+1)·s·B + s·A(s·A + 2θ²)]`.
pub fn bias_var(p: &FormulaInputs, n: usize, gamma: f64) -> f64 {
    let a = sum_a(n, p.phi);
    let b = sum_b(n, p.phi);
    let t2 = p.theta * p.theta;
    -((t2 + 1.0) * p.svr * b + p.svr * a * (p.svr * a + 2.0 * t2)) / (gamma * gamma)
}

/// `(s/(2θ))[s·A² + 2(θ²−1)·A + (θ²+1)·B]`, independent of γ.
pub fn bias_sr(p: &FormulaInputs, n: usize) -> Result<f64, AnalysisError> {
    if !(p.theta.abs() >= THETA_EPS) {
        return Err(AnalysisError::ThetaNearZero(p.theta));
    }
    let a = sum_a(n, p.phi);
    let b = sum_b(n, p.phi);
    let t2 = p.theta * p.theta;
    Ok(p.svr / (2.0 * p.theta) * (p.svr * a * a + 2.0 * (t2 - 1.0) * a + (t2 + 1.0) * b))
}

pub fn theoretical_bias_mean(spec: &AssetSpec, n: usize, gamma: f64) -> f64 {
    bias_mean(&FormulaInputs::from_spec(spec), n, gamma)
}

pub fn theoretical_bias_var(spec: &AssetSpec, n: usize, gamma: f64) -> f64 {
    bias_var(&FormulaInputs::from_spec(spec), n, gamma)
}

pub fn theoretical_bias_sr(spec: &AssetSpec, n: usize) -> Result<f64, AnalysisError> {
    bias_sr(&FormulaInputs::from_spec(spec), n)
}

/// First-order Sharpe bias from mean and variance biases:
/// `(γ/θ)(bias_mean − (γ/2)·bias_var)`.
pub fn taylor_sr_bias(bias_mean: f64, bias_var: f64, theta: f64, gamma: f64) -> Result<f64, AnalysisError> {
    if !(theta.abs() >= THETA_EPS) {
        return Err(AnalysisError::ThetaNearZero(theta));
    }
    Ok(gamma / theta * (bias_mean - gamma / 2.0 * bias_var))
}

// ─── Bounds ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFlag {
    /// ψ < 0: outside the assumptions behind the bounds.
    NegativePsi,
    /// |θ| < 0.05: the analytical Sharpe bound is unreliable.
    SmallTheta,
    /// n ≤ 10: the numerical Sharpe bound is only conjectured for n > 10.
    SmallWindow,
    /// θ² + Cψ ≤ 0: the numerical Sharpe bound is undefined.
    NumericalUndefined,
}

impl BoundFlag {
    pub fn label(&self) -> &'static str {
        match self {
            Self::NegativePsi => "negative_psi",
            Self::SmallTheta => "small_theta",
            Self::SmallWindow => "small_window",
            Self::NumericalUndefined => "numerical_undefined",
        }
    }
}

/// Definition of the polynomial `C` in the variance bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CVariant {
    /// `C = 3θ² + ψ + 1`.
    #[default]
    MainText,
    /// `C = ψ(3θ² + ψ + 1)`, kept for comparison only.
    Appendix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub mean_bound: f64,
    pub var_bound: f64,
    pub sr_analytical: f64,
    pub sr_numerical: f64,
    pub c: f64,
    pub theta: f64,
    pub psi: f64,
    pub gamma: f64,
    pub n: usize,
    pub flags: Vec<BoundFlag>,
}

impl BoundSet {
    pub fn flag_labels(&self) -> String {
        self.flags.iter().map(|f| f.label()).collect::<Vec<_>>().join(";")
    }
}

pub fn bounds(theta: f64, psi: f64, gamma: f64, n: usize) -> BoundSet {
    bounds_with(theta, psi, gamma, n, CVariant::MainText)
}

/// The four bounds. The numerical Sharpe bound is extended to negative θ as
/// `sign(θ)·(|θ| − (θ²+ψ)/√(θ²+Cψ))`, which keeps it odd in θ like the exact
/// Sharpe bias and equal to zero at ψ = 0.
pub fn bounds_with(theta: f64, psi: f64, gamma: f64, n: usize, variant: CVariant) -> BoundSet {
    let t2 = theta * theta;
    let poly = 3.0 * t2 + psi + 1.0;
    let c = match variant {
        CVariant::MainText => poly,
        CVariant::Appendix => psi * poly,
    };
    let mut flags = Vec::new();
    if psi < 0.0 {
        flags.push(BoundFlag::NegativePsi);
    }
    if theta.abs() < 0.05 {
        flags.push(BoundFlag::SmallTheta);
    }
    if n <= 10 {
        flags.push(BoundFlag::SmallWindow);
    }
    let sr_analytical = if psi == 0.0 { 0.0 } else { 0.5 * (psi / theta) * (c - 2.0) };
    let radicand = t2 + c * psi;
    let sr_numerical = if psi == 0.0 {
        0.0
    } else if radicand > 0.0 {
        theta - theta.signum() * (t2 + psi) / radicand.sqrt()
    } else {
        flags.push(BoundFlag::NumericalUndefined);
        f64::NAN
    };
    BoundSet {
        mean_bound: psi / gamma,
        var_bound: c * psi / (gamma * gamma),
        sr_analytical,
        sr_numerical,
        c,
        theta,
        psi,
        gamma,
        n,
        flags,
    }
}

/// `|bias| / |bound|`, with `0/0 = 0`.
pub fn abs_ratio(bias: f64, bound: f64) -> f64 {
    if bias == 0.0 && bound == 0.0 {
        0.0
    } else {
        bias.abs() / bound.abs()
    }
}

// ─── Dependence components ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceComponents {
    /// Train-test dependence: average covariance of window returns with the next return.
    pub ttd: f64,
    /// Within-training dependence: average off-diagonal covariance inside the window.
    pub wtd: f64,
}

pub fn dependence_components_param(spec: &AssetSpec, n: usize) -> DependenceComponents {
    let s2 = spec.latent.sigma2_mu;
    let phi = spec.latent.phi;
    DependenceComponents {
        ttd: s2 * sum_a(n, phi),
        wtd: s2 * sum_b(n, phi),
    }
}

fn cumulative_from_acov(acov: &[f64], max_lag: usize) -> Vec<f64> {
    let mut total = 0.0;
    (1..=max_lag)
        .map(|lag| {
            total += acov[lag];
            total / lag as f64
        })
        .collect()
}

/// Plug-in components from sample autocovariances (divisor T):
/// `ttd = (1/n) Σ_{k=1..n} γ̂(k)`, `wtd = (2/n²) Σ_{k=1..n−1} (n−k) γ̂(k)`.
pub fn dependence_components_empirical(series: &[f64], n: usize) -> Result<DependenceComponents, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::InvalidArgument("window must be at least 1".into()));
    }
    if series.len() < n + 2 {
        return Err(AnalysisError::InsufficientData {
            needed: n + 2,
            got: series.len(),
        });
    }
    let acov = stats::autocovariance(series, n);
    let ttd = cumulative_from_acov(&acov, n)[n - 1];
    let nf = n as f64;
    let wtd = 2.0 * (1..n).map(|k| (n - k) as f64 * acov[k]).sum::<f64>() / (nf * nf);
    Ok(DependenceComponents { ttd, wtd })
}

/// `curve[L−1] = (1/L) Σ_{k=1..L} γ̂(k)` for `L = 1..=max_lag`.
pub fn cumulative_avg_autocovariance(series: &[f64], max_lag: usize) -> Result<Vec<f64>, AnalysisError> {
    if max_lag == 0 || max_lag >= series.len() {
        return Err(AnalysisError::InsufficientData {
            needed: max_lag + 1,
            got: series.len(),
        });
    }
    Ok(cumulative_from_acov(&stats::autocovariance(series, max_lag), max_lag))
}

// ─── Monte Carlo ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub scheme: ResampleScheme,
    pub bias_mean: f64,
    pub bias_var: f64,
    pub bias_sr: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub se_sr: f64,
    /// Cross-path standard deviations of the standard backtest statistics.
    pub se_standard_mean: f64,
    pub se_standard_var: f64,
    pub se_standard_sr: f64,
    /// Cross-path averages of the standard backtest statistics.
    pub standard_mean: f64,
    pub standard_var: f64,
    pub standard_sr: f64,
    pub paths: usize,
    pub failed_paths: usize,
}

impl BiasEstimate {
    pub fn standardized_mean(&self) -> f64 {
        self.bias_mean / self.se_standard_mean
    }

    pub fn standardized_var(&self) -> f64 {
        self.bias_var / self.se_standard_var
    }

    pub fn standardized_sr(&self) -> f64 {
        self.bias_sr / self.se_standard_sr
    }
}

/// Maximum fraction of failed Monte Carlo paths before a run aborts.
pub const FAILURE_BUDGET: f64 = 0.01;

type PathOutcome = Result<Vec<[f64; 3]>, String>;

/// Bias estimates for several schemes on shared paths.
///
/// Path `k` is simulated with seed `derive_seed(seed, [k])`; every scheme
/// resamples it with seed `derive_seed(path_seed, [RESAMPLE])`. Entry 0 of
/// each path outcome is the standard backtest, entries `1..` the schemes.
pub fn mc_bias_schemes(
    specs: &[AssetSpec],
    cfg: &BacktestConfig,
    paths: usize,
    length: usize,
    seed: u64,
    schemes: &[ResampleScheme],
) -> Result<Vec<BiasEstimate>, AnalysisError> {
    if paths < 2 {
        return Err(AnalysisError::InvalidArgument("need at least two Monte Carlo paths".into()));
    }
    if schemes.is_empty() {
        return Err(AnalysisError::InvalidArgument("no resampling scheme given".into()));
    }
    cfg.validate().map_err(BacktestError::from)?;

    let outcomes: Vec<PathOutcome> = (0..paths)
        .into_par_iter()
        .map(|k| {
            let path_seed = rng::derive_seed(seed, &[k as u64]);
            let path = dgp::simulate_path(specs, length, path_seed).map_err(|e| e.to_string())?;
            let resample_seed = rng::derive_seed(path_seed, &[tag::RESAMPLE]);
            let mut row = Vec::with_capacity(schemes.len() + 1);
            let base = backtest::standard_backtest(&path, cfg).map_err(|e| e.to_string())?;
            row.push([base.mu_p, base.sigma2_p, base.sharpe]);
            for &scheme in schemes {
                let m = backtest::resampled_backtest(&path, cfg, scheme, resample_seed).map_err(|e| e.to_string())?;
                row.push([m.mu_p, m.sigma2_p, m.sharpe]);
            }
            Ok(row)
        })
        .collect();

    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed as f64 > FAILURE_BUDGET * paths as f64 || paths - failed < 2 {
        let first = outcomes
            .iter()
            .find_map(|o| o.as_ref().err().cloned())
            .unwrap_or_default();
        return Err(AnalysisError::FailureBudgetExceeded {
            failed,
            total: paths,
            first,
        });
    }
    let rows: Vec<&Vec<[f64; 3]>> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let column = |j: usize, stat: usize| -> Vec<f64> { rows.iter().map(|r| r[j][stat]).collect() };
    let diffs = |j: usize, stat: usize| -> Vec<f64> { rows.iter().map(|r| r[j][stat] - r[0][stat]).collect() };
    let root_k = (rows.len() as f64).sqrt();

    let standard: Vec<Vec<f64>> = (0..3).map(|s| column(0, s)).collect();
    Ok(schemes
        .iter()
        .enumerate()
        .map(|(i, &scheme)| {
            let d: Vec<Vec<f64>> = (0..3).map(|s| diffs(i + 1, s)).collect();
            BiasEstimate {
                scheme,
                bias_mean: stats::mean(&d[0]),
                bias_var: stats::mean(&d[1]),
                bias_sr: stats::mean(&d[2]),
                se_mean: stats::sample_sd(&d[0]) / root_k,
                se_var: stats::sample_sd(&d[1]) / root_k,
                se_sr: stats::sample_sd(&d[2]) / root_k,
                se_standard_mean: stats::sample_sd(&standard[0]),
                se_standard_var: stats::sample_sd(&standard[1]),
                se_standard_sr: stats::sample_sd(&standard[2]),
                standard_mean: stats::mean(&standard[0]),
                standard_var: stats::mean(&standard[1]),
                standard_sr: stats::mean(&standard[2]),
                paths: rows.len(),
                failed_paths: failed,
            }
        })
        .collect())
}

/// Monte Carlo bias of one resampling scheme relative to the standard backtest.
pub fn mc_bias(
    specs: &[AssetSpec],
    cfg: &BacktestConfig,
    paths: usize,
    length: usize,
    seed: u64,
    scheme: ResampleScheme,
) -> Result<BiasEstimate, AnalysisError> {
    Ok(mc_bias_schemes(specs, cfg, paths, length, seed, &[scheme])?.remove(0))
}
