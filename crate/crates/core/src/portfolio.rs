//! Rolling-window mean-variance portfolio rule `w_t = (1/γ) Σ⁻¹ μ̂_t` and its
//! out-of-sample returns along a sample path.
//!
//! Time indexing: `t` counts observations seen so far, so the estimation
//! window at `t` is rows `t-n .. t` (0-based, exclusive end) and the weight
//! formed at `t` earns the return in row `t`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::SamplePath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("invalid backtest config: {0}")]
    InvalidConfig(String),
    #[error("window of {window} ending at t = {t} does not fit a path of length {len}")]
    WindowOutOfRange { t: usize, window: usize, len: usize },
    #[error("covariance matrix is singular at t = {t:?}")]
    SingularCovariance { t: Option<usize> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// How the covariance matrix in the weight formula is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// A fixed, known covariance matrix (rows of an `M × M` matrix).
    KnownCovariance(Vec<Vec<f64>>),
    /// Rolling sample covariance, divisor `n - 1`.
    RollingSample,
    /// Diagonal of the rolling sample covariance.
    RollingDiagonal,
}

impl EstimatorMode {
    pub fn known_variance(sigma2: f64) -> Self {
        Self::KnownCovariance(vec![vec![sigma2]])
    }

    pub fn known_diagonal(variances: &[f64]) -> Self {
        let m = variances.len();
        Self::KnownCovariance(
            (0..m)
                .map(|i| (0..m).map(|j| if i == j { variances[i] } else { 0.0 }).collect())
                .collect(),
        )
    }
}

fn default_window() -> usize {
    60
}
fn default_gamma() -> f64 {
    100.0
}
fn default_estimator() -> EstimatorMode {
    EstimatorMode::RollingSample
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Rolling window length `n` in months.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Risk aversion `γ`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Monthly risk-free rate.
    #[serde(default)]
    pub rf: f64,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorMode,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            gamma: default_gamma(),
            rf: 0.0,
            estimator: default_estimator(),
        }
    }
}

impl BacktestConfig {
    pub fn new(window: usize, gamma: f64, estimator: EstimatorMode) -> Self {
        Self {
            window,
            gamma,
            rf: 0.0,
            estimator,
        }
    }

    pub fn validate(&self) -> Result<(), PortfolioError> {
        if self.window < 1 {
            return Err(PortfolioError::InvalidConfig("window must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(PortfolioError::InvalidConfig("gamma must be positive".into()));
        }
        if !self.rf.is_finite() {
            return Err(PortfolioError::InvalidConfig("rf must be finite".into()));
        }
        match &self.estimator {
            EstimatorMode::KnownCovariance(rows) => {
                known_cholesky(rows)?;
            }
            _ if self.window < 2 => {
                return Err(PortfolioError::InvalidConfig(
                    "sample covariance modes need a window of at least 2".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Weights `w_t`, one row per decision date `t = n .. T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSeries {
    weights: Vec<f64>,
    assets: usize,
}

impl WeightSeries {
    pub fn rows(&self) -> usize {
        self.weights.len() / self.assets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.assets..(i + 1) * self.assets]
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, PortfolioError> {
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PortfolioError::DimensionMismatch("covariance must be square and non-empty".into()));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

fn known_cholesky(rows: &[Vec<f64>]) -> Result<Cholesky<f64, nalgebra::Dyn>, PortfolioError> {
    let mat = to_matrix(rows)?;
    let m = mat.nrows();
    for i in 0..m {
        for j in 0..i {
            let (a, b) = (mat[(i, j)], mat[(j, i)]);
            if (a - b).abs() > 1e-12 * (a.abs() + b.abs()).max(f64::MIN_POSITIVE) {
                return Err(PortfolioError::InvalidConfig("known covariance is not symmetric".into()));
            }
        }
    }
    checked_cholesky(mat, None)
}

fn checked_cholesky(
    mat: DMatrix<f64>,
    t: Option<usize>,
) -> Result<Cholesky<f64, nalgebra::Dyn>, PortfolioError> {
    let diag_max = mat.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    let chol = Cholesky::new(mat).ok_or(PortfolioError::SingularCovariance { t })?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * diag_max) {
        return Err(PortfolioError::SingularCovariance { t });
    }
    Ok(chol)
}

fn check_window(path: &SamplePath, t: usize, window: usize) -> Result<(), PortfolioError> {
    if window == 0 || t < window || t > path.len() {
        return Err(PortfolioError::WindowOutOfRange {
            t,
            window,
            len: path.len(),
        });
    }
    Ok(())
}

/// Trailing average `(1/n) Σ R_i` over rows `t-n .. t`.
pub fn rolling_mean(path: &SamplePath, t: usize, window: usize) -> Result<Vec<f64>, PortfolioError> {
    check_window(path, t, window)?;
    let m = path.assets();
    let mut out = vec![0.0; m];
    for s in t - window..t {
        for (o, r) in out.iter_mut().zip(path.row(s)) {
            *o += r;
        }
    }
    out.iter_mut().for_each(|o| *o /= window as f64);
    Ok(out)
}

/// Covariance matrix used for the weights at `t`.
pub fn rolling_covariance(
    path: &SamplePath,
    t: usize,
    window: usize,
    mode: &EstimatorMode,
) -> Result<DMatrix<f64>, PortfolioError> {
    let m = path.assets();
    let cov = match mode {
        EstimatorMode::KnownCovariance(rows) => {
            let mat = to_matrix(rows)?;
            if mat.nrows() != m {
                return Err(PortfolioError::DimensionMismatch(format!(
                    "known covariance is {}x{} but path has {m} assets",
                    mat.nrows(),
                    mat.nrows()
                )));
            }
            mat
        }
        EstimatorMode::RollingSample | EstimatorMode::RollingDiagonal => {
            check_window(path, t, window)?;
            if window < 2 {
                return Err(PortfolioError::InvalidConfig("sample covariance needs n >= 2".into()));
            }
            let mean = rolling_mean(path, t, window)?;
            let mut cov = DMatrix::<f64>::zeros(m, m);
            for s in t - window..t {
                let row = path.row(s);
                for i in 0..m {
                    let di = row[i] - mean[i];
                    for j in 0..=i {
                        cov[(i, j)] += di * (row[j] - mean[j]);
                    }
                }
            }
            for i in 0..m {
                for j in 0..=i {
                    cov[(i, j)] /= (window - 1) as f64;
                    cov[(j, i)] = cov[(i, j)];
                }
            }
            if matches!(mode, EstimatorMode::RollingDiagonal) {
                cov = DMatrix::from_diagonal(&cov.diagonal());
            }
            // Degenerate windows: zero variance relative to the level of the data.
            for i in 0..m {
                let scale: f64 = (t - window..t).map(|s| path.get(s, i).powi(2)).sum::<f64>() / window as f64;
                if !(cov[(i, i)] > 1e-14 * scale) {
                    return Err(PortfolioError::SingularCovariance { t: Some(t) });
                }
            }
            cov
        }
    };
    checked_cholesky(cov.clone(), Some(t))?;
    Ok(cov)
}

/// `w = (1/γ) Σ⁻¹ μ̂`.
pub fn mv_weights(mean: &[f64], cov: &DMatrix<f64>, gamma: f64) -> Result<Vec<f64>, PortfolioError> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(PortfolioError::DimensionMismatch("mean and covariance sizes differ".into()));
    }
    let chol = checked_cholesky(cov.clone(), None)?;
    let x = chol.solve(&DVector::from_column_slice(mean));
    Ok(x.iter().map(|v| v / gamma).collect())
}

/// Running centred sums for the rolling mean and variance of each asset.
/// Sums are kept about the first observation to limit cancellation.
struct RollingMoments {
    reference: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl RollingMoments {
    fn new(path: &SamplePath, window: usize) -> Self {
        let reference = path.row(0).to_vec();
        let m = path.assets();
        let mut this = Self {
            reference,
            sum: vec![0.0; m],
            sum_sq: vec![0.0; m],
        };
        for s in 0..window {
            this.push(path.row(s));
        }
        this
    }

    fn push(&mut self, row: &[f64]) {
        for i in 0..row.len() {
            let d = row[i] - self.reference[i];
            self.sum[i] += d;
            self.sum_sq[i] += d * d;
        }
    }

    fn pop(&mut self, row: &[f64]) {
        for i in 0..row.len() {
            let d = row[i] - self.reference[i];
            self.sum[i] -= d;
            self.sum_sq[i] -= d * d;
        }
    }

    fn mean(&self, i: usize, window: usize) -> f64 {
        self.reference[i] + self.sum[i] / window as f64
    }

    fn variance(&self, i: usize, window: usize) -> f64 {
        let n = window as f64;
        (self.sum_sq[i] - self.sum[i] * self.sum[i] / n) / (n - 1.0)
    }

    fn scale(&self, i: usize, window: usize) -> f64 {
        self.sum_sq[i] / window as f64
    }
}

fn exact_window_variance(path: &SamplePath, t: usize, window: usize, i: usize) -> (f64, f64) {
    let n = window as f64;
    let mean = (t - window..t).map(|s| path.get(s, i)).sum::<f64>() / n;
    let var = (t - window..t).map(|s| (path.get(s, i) - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = (t - window..t).map(|s| path.get(s, i).powi(2)).sum::<f64>() / n;
    (var, scale)
}

/// Walks the path and calls `sink(t, weights)` for each decision date.
fn for_each_weight(
    path: &SamplePath,
    cfg: &BacktestConfig,
    mut sink: impl FnMut(usize, &[f64]),
) -> Result<(), PortfolioError> {
    cfg.validate()?;
    let n = cfg.window;
    let len = path.len();
    let m = path.assets();
    if len <= n {
        return Err(PortfolioError::WindowOutOfRange { t: len, window: n, len });
    }
    let mut moments = RollingMoments::new(path, n);
    let mut mean = vec![0.0; m];
    let mut w = vec![0.0; m];

    let known = match &cfg.estimator {
        EstimatorMode::KnownCovariance(rows) => {
            let chol = known_cholesky(rows)?;
            if chol.l_dirty().nrows() != m {
                return Err(PortfolioError::DimensionMismatch(format!(
                    "known covariance has {} rows but path has {m} assets",
                    chol.l_dirty().nrows()
                )));
            }
            Some(chol)
        }
        _ => None,
    };
    let diagonal = matches!(cfg.estimator, EstimatorMode::RollingDiagonal)
        || (m == 1 && matches!(cfg.estimator, EstimatorMode::RollingSample));

    for t in n..len {
        if t > n {
            moments.pop(path.row(t - n - 1));
            moments.push(path.row(t - 1));
        }
        for (i, mu) in mean.iter_mut().enumerate() {
            *mu = moments.mean(i, n) - cfg.rf;
        }
        if let Some(chol) = &known {
            let x = chol.solve(&DVector::from_column_slice(&mean));
            for i in 0..m {
                w[i] = x[i] / cfg.gamma;
            }
        } else if diagonal {
            for i in 0..m {
                let mut var = moments.variance(i, n);
                let mut scale = moments.scale(i, n);
                if !(var > 1e-8 * scale) {
                    (var, scale) = exact_window_variance(path, t, n, i);
                }
                if !(var > 1e-14 * scale) {
                    return Err(PortfolioError::SingularCovariance { t: Some(t) });
                }
                w[i] = mean[i] / (cfg.gamma * var);
            }
        } else {
            let cov = rolling_covariance(path, t, n, &EstimatorMode::RollingSample)?;
            let chol = checked_cholesky(cov, Some(t))?;
            let x = chol.solve(&DVector::from_column_slice(&mean));
            for i in 0..m {
                w[i] = x[i] / cfg.gamma;
            }
        }
        sink(t, &w);
    }
    Ok(())
}

/// Weight series for every decision date.
pub fn weights(path: &SamplePath, cfg: &BacktestConfig) -> Result<WeightSeries, PortfolioError> {
    let mut out = Vec::with_capacity((path.len().saturating_sub(cfg.window)) * path.assets());
    for_each_weight(path, cfg, |_, w| out.extend_from_slice(w))?;
    Ok(WeightSeries {
        weights: out,
        assets: path.assets(),
    })
}

/// Out-of-sample portfolio returns `w_t' R_{t+1} + rf (1 - 1'w_t)`, length `T - n`.
pub fn realized_returns(path: &SamplePath, cfg: &BacktestConfig) -> Result<Vec<f64>, PortfolioError> {
    let mut out = Vec::with_capacity(path.len().saturating_sub(cfg.window));
    let rf = cfg.rf;
    for_each_weight(path, cfg, |t, w| {
        let row = path.row(t);
        let mut r = 0.0;
        let mut total = 0.0;
        for i in 0..w.len() {
            r += w[i] * row[i];
            total += w[i];
        }
        if rf != 0.0 {
            r += rf * (1.0 - total);
        }
        out.push(r);
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Origin;

    fn series(xs: &[f64]) -> SamplePath {
        SamplePath::from_series(xs, Origin::Historical).unwrap()
    }

    #[test]
    fn rolling_mean_examples() {
        let p = series(&[0.1, -0.05, 0.02]);
        assert!((rolling_mean(&p, 2, 2).unwrap()[0] - 0.025).abs() < 1e-15);
        assert_eq!(rolling_mean(&p, 1, 1).unwrap()[0], 0.1);
        let c = series(&[0.03; 5]);
        assert!((rolling_mean(&c, 5, 4).unwrap()[0] - 0.03).abs() < 1e-15);
        assert!(matches!(rolling_mean(&p, 1, 2), Err(PortfolioError::WindowOutOfRange { .. })));
    }

    #[test]
    fn rolling_covariance_examples() {
        let p = series(&[0.01, 0.03]);
        let v = rolling_covariance(&p, 2, 2, &EstimatorMode::RollingSample).unwrap();
        assert!((v[(0, 0)] - 0.0002).abs() < 1e-15);

        let known = EstimatorMode::known_variance(0.04);
        let v = rolling_covariance(&p, 2, 2, &known).unwrap();
        assert_eq!(v[(0, 0)], 0.04);

        let c = series(&[0.02; 6]);
        assert!(matches!(
            rolling_covariance(&c, 6, 5, &EstimatorMode::RollingSample),
            Err(PortfolioError::SingularCovariance { .. })
        ));
    }

    #[test]
    fn diagonal_mode_drops_cross_terms() {
        let rows = vec![0.01, 0.02, 0.03, 0.01, -0.02, 0.00, 0.04, 0.05];
        let p = SamplePath::from_rows(rows, 4, 2, Origin::Historical).unwrap();
        let full = rolling_covariance(&p, 4, 4, &EstimatorMode::RollingSample).unwrap();
        let diag = rolling_covariance(&p, 4, 4, &EstimatorMode::RollingDiagonal).unwrap();
        assert_ne!(full[(0, 1)], 0.0);
        assert_eq!(diag[(0, 1)], 0.0);
        assert_eq!(diag[(1, 1)], full[(1, 1)]);
    }

    #[test]
    fn mv_weight_examples() {
        let cov = DMatrix::from_element(1, 1, 0.01);
        assert_eq!(mv_weights(&[0.0], &cov, 1.0).unwrap(), vec![0.0]);
        let w = mv_weights(&[0.1], &cov, 1.0).unwrap();
        assert!((w[0] - 10.0).abs() < 1e-12);
        let w2 = mv_weights(&[0.1], &cov, 2.0).unwrap();
        assert!((w2[0] - 5.0).abs() < 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(mv_weights(&[0.1, 0.1], &singular, 1.0).is_err());
    }

    #[test]
    fn realized_returns_hand_rollout() {
        let p = series(&[0.1, -0.05, 0.02]);
        let cfg = BacktestConfig::new(1, 1.0, EstimatorMode::known_variance(0.01));
        let r = realized_returns(&p, &cfg).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] + 0.5).abs() < 1e-12);
        assert!((r[1] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_path_earns_constant_return() {
        let c = 0.01;
        let p = series(&[c; 10]);
        let cfg = BacktestConfig::new(3, 5.0, EstimatorMode::known_variance(0.002));
        for r in realized_returns(&p, &cfg).unwrap() {
            assert!((r - c * c / (5.0 * 0.002)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_path_gives_zero_returns_under_known_covariance() {
        let p = series(&[0.0; 8]);
        let cfg = BacktestConfig::new(3, 5.0, EstimatorMode::known_variance(0.002));
        assert!(realized_returns(&p, &cfg).unwrap().iter().all(|r| *r == 0.0));
        let est = BacktestConfig::new(3, 5.0, EstimatorMode::RollingSample);
        assert!(matches!(realized_returns(&p, &est), Err(PortfolioError::SingularCovariance { .. })));
    }

    #[test]
    fn incremental_weights_match_direct_formula() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.01 + 0.002).collect();
        let p = series(&xs);
        let cfg = BacktestConfig::new(12, 3.0, EstimatorMode::RollingSample);
        let ws = weights(&p, &cfg).unwrap();
        assert_eq!(ws.rows(), 28);
        for (k, t) in (12..40).enumerate() {
            let mean = rolling_mean(&p, t, 12).unwrap();
            let cov = rolling_covariance(&p, t, 12, &EstimatorMode::RollingSample).unwrap();
            let w = mv_weights(&mean, &cov, 3.0).unwrap();
            assert!((ws.row(k)[0] - w[0]).abs() < 1e-10 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn full_sample_mode_matches_direct_formula() {
        let rows: Vec<f64> = (0..60).map(|i| ((i as f64 * 12.9898).sin() * 43758.5453).fract() * 0.1).collect();
        let p = SamplePath::from_rows(rows, 20, 3, Origin::Historical).unwrap();
        let cfg = BacktestConfig::new(8, 10.0, EstimatorMode::RollingSample);
        let ws = weights(&p, &cfg).unwrap();
        let t = 15;
        let mean = rolling_mean(&p, t, 8).unwrap();
        let cov = rolling_covariance(&p, t, 8, &EstimatorMode::RollingSample).unwrap();
        let w = mv_weights(&mean, &cov, 10.0).unwrap();
        for i in 0..3 {
            assert!((ws.row(t - 8)[i] - w[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn risk_free_rate_shifts_forecast_and_return() {
        let p = series(&[0.02, 0.01, 0.03]);
        let mut cfg = BacktestConfig::new(1, 2.0, EstimatorMode::known_variance(0.01));
        cfg.rf = 0.005;
        let r = realized_returns(&p, &cfg).unwrap();
        let w0 = (0.02 - 0.005) / (2.0 * 0.01);
        assert!((r[0] - (w0 * 0.01 + 0.005 * (1.0 - w0))).abs() < 1e-14);
    }

    #[test]
    fn config_validation() {
        assert!(BacktestConfig::new(0, 1.0, EstimatorMode::RollingSample).validate().is_err());
        assert!(BacktestConfig::new(5, 0.0, EstimatorMode::RollingSample).validate().is_err());
        assert!(BacktestConfig::new(1, 1.0, EstimatorMode::RollingSample).validate().is_err());
        let asym = EstimatorMode::KnownCovariance(vec![vec![1.0, 0.5], vec![0.4, 1.0]]);
        assert!(BacktestConfig::new(5, 1.0, asym).validate().is_err());
        let json = r#"{"window": 60, "gamma": 100, "estimator": {"known_covariance": [[0.01]]}}"#;
        let cfg: BacktestConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.estimator, EstimatorMode::known_variance(0.01));
    }
}
