//! Backtest statistics, resampling schemes, bagging, and the Sharpe-ratio
//! sample-size calculation.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{Origin, SamplePath};
use crate::portfolio::{self, BacktestConfig, PortfolioError};
use crate::rng::{self, tag};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("series needs at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("block length {b} must lie in 1..={len}")]
    InvalidBlockLength { b: usize, len: usize },
    #[error("probability {name} = {value} must lie strictly between 0 and 1")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
}

/// Sample moments of a realized-return series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mu_p: f64,
    /// Sample variance, divisor `N - 1`.
    pub sigma2_p: f64,
    /// Monthly Sharpe ratio `mu_p / sqrt(sigma2_p)`.
    pub sharpe: f64,
    pub count: usize,
}

impl MomentSummary {
    pub fn annualized_sharpe(&self) -> f64 {
        self.sharpe * 12f64.sqrt()
    }
}

pub fn sharpe_moments(series: &[f64]) -> Result<MomentSummary, BacktestError> {
    if series.len() < 2 {
        return Err(BacktestError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    let mu_p = stats::mean(series);
    let sigma2_p = stats::sample_variance(series);
    let scale = series.iter().map(|x| x * x).sum::<f64>() / series.len() as f64;
    if !(sigma2_p > 1e-14 * scale) {
        return Err(BacktestError::DegenerateSeries);
    }
    Ok(MomentSummary {
        mu_p,
        sigma2_p,
        sharpe: mu_p / sigma2_p.sqrt(),
        count: series.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    Identity,
    /// Uniform random permutation of the rows (resampling without replacement).
    IidShuffle,
    /// Circular moving-block bootstrap with block length `b`, with replacement.
    Block(usize),
}

impl ResampleScheme {
    pub fn label(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::IidShuffle => "iid_shuffle".into(),
            Self::Block(b) => format!("block_{b}"),
        }
    }
}

impl std::str::FromStr for ResampleScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Self::Identity),
            "iid_shuffle" | "shuffle" | "iid" => Ok(Self::IidShuffle),
            other => other
                .strip_prefix("block_")
                .or_else(|| other.strip_prefix("block:"))
                .and_then(|b| b.parse().ok())
                .map(Self::Block)
                .ok_or_else(|| format!("unknown resampling scheme '{s}'")),
        }
    }
}

pub fn standard_backtest(path: &SamplePath, cfg: &BacktestConfig) -> Result<MomentSummary, BacktestError> {
    let realized = portfolio::realized_returns(path, cfg)?;
    sharpe_moments(&realized)
}

/// Rows in uniformly random order; rows move as whole cross-sections.
pub fn shuffle_path(path: &SamplePath, seed: u64) -> SamplePath {
    let mut order: Vec<usize> = (0..path.len()).collect();
    order.shuffle(&mut rng::rng_from(seed));
    path.reorder(&order, Origin::Resampled(ResampleScheme::IidShuffle))
}

/// Circular moving-block bootstrap: block starts drawn uniformly with
/// replacement, `b` consecutive rows per block (wrapping at the end),
/// concatenated and truncated to the input length.
pub fn block_resample(path: &SamplePath, b: usize, seed: u64) -> Result<SamplePath, BacktestError> {
    let len = path.len();
    if b == 0 || b > len {
        return Err(BacktestError::InvalidBlockLength { b, len });
    }
    let mut rng = rng::rng_from(seed);
    let mut order = Vec::with_capacity(len + b);
    while order.len() < len {
        let start = rng.random_range(0..len);
        order.extend((0..b).map(|k| (start + k) % len));
    }
    order.truncate(len);
    Ok(path.reorder(&order, Origin::Resampled(ResampleScheme::Block(b))))
}

pub fn resample(path: &SamplePath, scheme: ResampleScheme, seed: u64) -> Result<SamplePath, BacktestError> {
    match scheme {
        ResampleScheme::Identity => {
            let order: Vec<usize> = (0..path.len()).collect();
            Ok(path.reorder(&order, Origin::Resampled(ResampleScheme::Identity)))
        }
        ResampleScheme::IidShuffle => Ok(shuffle_path(path, seed)),
        ResampleScheme::Block(b) => block_resample(path, b, seed),
    }
}

pub fn resampled_backtest(
    path: &SamplePath,
    cfg: &BacktestConfig,
    scheme: ResampleScheme,
    seed: u64,
) -> Result<MomentSummary, BacktestError> {
    if scheme == ResampleScheme::Identity {
        return standard_backtest(path, cfg);
    }
    standard_backtest(&resample(path, scheme, seed)?, cfg)
}

/// Sharpe ratios of `bags` independent resamples of one path; bag `k` uses
/// seed `derive_seed(seed, [k])`.
pub fn bag_sharpes(
    path: &SamplePath,
    cfg: &BacktestConfig,
    bags: usize,
    scheme: ResampleScheme,
    seed: u64,
) -> Result<Vec<f64>, BacktestError> {
    if bags == 0 {
        return Err(BacktestError::InvalidArgument("need at least one bag".into()));
    }
    (0..bags)
        .map(|k| resampled_backtest(path, cfg, scheme, rng::derive_seed(seed, &[k as u64])).map(|m| m.sharpe))
        .collect()
}

/// Bagged Sharpe ratio of one path: the mean of [`bag_sharpes`].
pub fn bag_average(
    path: &SamplePath,
    cfg: &BacktestConfig,
    bags: usize,
    scheme: ResampleScheme,
    seed: u64,
) -> Result<f64, BacktestError> {
    Ok(stats::mean(&bag_sharpes(path, cfg, bags, scheme, seed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggingReport {
    /// Average of the per-path bagged Sharpe ratios.
    pub mean_sharpe: f64,
    /// Variance of a single resampled Sharpe ratio across paths.
    pub var_single: f64,
    /// Variance of the bag average across paths.
    pub var_bagged: f64,
    /// Correlation between two resampled Sharpe ratios of the same path.
    pub rho: f64,
    pub bags: usize,
    pub paths: usize,
}

/// Variance reduction from bagging, estimated over an outer loop of paths.
///
/// For each path the bag average of `bags` resamples is recorded; separately,
/// two probe resamples (independent of the bag) give `var_single` and the
/// pairwise correlation `rho`, so the limit `var_bagged → rho · var_single`
/// can be checked against independent estimates.
pub fn bagged_sharpe(
    paths: &[SamplePath],
    cfg: &BacktestConfig,
    bags: usize,
    scheme: ResampleScheme,
    seed: u64,
) -> Result<BaggingReport, BacktestError> {
    if paths.len() < 2 {
        return Err(BacktestError::InvalidArgument(
            "bagging variance needs at least two outer replications".into(),
        ));
    }
    let per_path: Vec<(f64, f64, f64)> = paths
        .par_iter()
        .enumerate()
        .map(|(r, path)| {
            let path_seed = rng::derive_seed(seed, &[r as u64]);
            let avg = bag_average(path, cfg, bags, scheme, path_seed)?;
            let probe_seed = rng::derive_seed(path_seed, &[tag::PROBE]);
            let a = resampled_backtest(path, cfg, scheme, rng::derive_seed(probe_seed, &[0]))?.sharpe;
            let b = resampled_backtest(path, cfg, scheme, rng::derive_seed(probe_seed, &[1]))?.sharpe;
            Ok((avg, a, b))
        })
        .collect::<Result<_, BacktestError>>()?;

    let averages: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let first: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let second: Vec<f64> = per_path.iter().map(|p| p.2).collect();
    let var_single = 0.5 * (stats::sample_variance(&first) + stats::sample_variance(&second));
    let rho = if first == second {
        1.0
    } else {
        stats::pearson(&first, &second).clamp(-1.0, 1.0)
    };
    Ok(BaggingReport {
        mean_sharpe: stats::mean(&averages),
        var_single,
        var_bagged: stats::sample_variance(&averages),
        rho,
        bags,
        paths: paths.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    One,
    Two,
}

/// Inputs of the Sharpe-difference power calculation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerInputs {
    /// Annualized Sharpe-ratio difference to detect.
    pub delta_sr_annual: f64,
    pub power: f64,
    pub alpha: f64,
    /// Monthly Sharpe ratio of the strategies being compared.
    pub theta_monthly: f64,
    /// Correlation between the two strategies' returns.
    pub corr: f64,
    pub sided: Sided,
}

impl Default for PowerInputs {
    fn default() -> Self {
        Self {
            delta_sr_annual: 0.5,
            power: 0.8,
            alpha: 0.05,
            theta_monthly: 0.12,
            corr: 0.3,
            sided: Sided::One,
        }
    }
}

/// Unrounded months of data needed to detect a Sharpe difference, using the
/// asymptotic Sharpe variance `(1 + θ²/2)/N` for each strategy and
/// `2 − 2ρ` for the difference.
pub fn required_sample_size_exact(inputs: &PowerInputs) -> Result<f64, BacktestError> {
    let PowerInputs {
        delta_sr_annual,
        power,
        alpha,
        theta_monthly,
        corr,
        sided,
    } = *inputs;
    for (name, value) in [("power", power), ("alpha", alpha)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(BacktestError::InvalidProbability { name, value });
        }
    }
    if !(delta_sr_annual > 0.0) {
        return Err(BacktestError::InvalidArgument("delta_sr_annual must be positive".into()));
    }
    if !(corr.abs() < 1.0) || !theta_monthly.is_finite() {
        return Err(BacktestError::InvalidArgument("|corr| must be below 1".into()));
    }
    let tail = match sided {
        Sided::One => alpha,
        Sided::Two => alpha / 2.0,
    };
    let z = stats::normal_quantile(1.0 - tail) + stats::normal_quantile(power);
    let delta_monthly = delta_sr_annual / 12f64.sqrt();
    Ok(z * z * (2.0 - 2.0 * corr) * (1.0 + theta_monthly * theta_monthly / 2.0) / (delta_monthly * delta_monthly))
}

/// [`required_sample_size_exact`] rounded up, at least one month.
pub fn required_sample_size(inputs: &PowerInputs) -> Result<u64, BacktestError> {
    Ok((required_sample_size_exact(inputs)?.ceil() as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_path, AssetSpec, ObservableMoments};
    use crate::portfolio::EstimatorMode;

    fn toy_path(len: usize) -> SamplePath {
        let obs = ObservableMoments::new(0.005, 0.004, 0.1, 0.3).unwrap();
        simulate_path(&[AssetSpec::new("a", obs).unwrap()], len, 5).unwrap()
    }

    #[test]
    fn sharpe_moment_examples() {
        let m = sharpe_moments(&[0.01, 0.03]).unwrap();
        assert!((m.mu_p - 0.02).abs() < 1e-15);
        assert!((m.sigma2_p - 0.0002).abs() < 1e-15);
        assert!((m.sharpe - 2f64.sqrt()).abs() < 1e-12);
        let s = sharpe_moments(&[-0.3, 0.3]).unwrap();
        assert_eq!(s.mu_p, 0.0);
        assert_eq!(s.sharpe, 0.0);
        assert_eq!(sharpe_moments(&[0.2, 0.2, 0.2]), Err(BacktestError::DegenerateSeries));
        assert!(matches!(sharpe_moments(&[0.2]), Err(BacktestError::TooShort { .. })));
    }

    #[test]
    fn standard_backtest_counts_and_degeneracy() {
        let path = toy_path(480);
        let cfg = BacktestConfig::default();
        let m = standard_backtest(&path, &cfg).unwrap();
        assert_eq!(m.count, 420);
        assert_eq!(m, standard_backtest(&path, &cfg).unwrap());

        let zeros = SamplePath::from_series(&[0.0; 100], Origin::Historical).unwrap();
        let known = BacktestConfig::new(60, 100.0, EstimatorMode::known_variance(0.01));
        assert_eq!(standard_backtest(&zeros, &known), Err(BacktestError::DegenerateSeries));
    }

    #[test]
    fn shuffle_of_single_row_is_identity() {
        let p = SamplePath::from_series(&[0.3], Origin::Historical).unwrap();
        assert_eq!(shuffle_path(&p, 1).as_slice(), p.as_slice());
    }

    #[test]
    fn shuffle_preserves_cross_sections() {
        let rows: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let p = SamplePath::from_rows(rows, 10, 3, Origin::Historical).unwrap();
        let s = shuffle_path(&p, 17);
        assert_eq!(s.origin, Origin::Resampled(ResampleScheme::IidShuffle));
        for t in 0..10 {
            let r = s.row(t);
            assert_eq!(r[1], r[0] + 1.0);
            assert_eq!(r[2], r[0] + 2.0);
        }
        assert_eq!(p.as_slice(), (0..30).map(|i| i as f64).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn full_length_block_is_a_rotation() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = SamplePath::from_series(&xs, Origin::Historical).unwrap();
        for seed in 0..200 {
            let r = block_resample(&p, 5, seed).unwrap().column(0);
            let start = xs.iter().position(|x| *x == r[0]).unwrap();
            let rotated: Vec<f64> = (0..5).map(|k| xs[(start + k) % 5]).collect();
            assert_eq!(r, rotated);
        }
    }

    #[test]
    fn unit_blocks_draw_input_rows() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let p = SamplePath::from_series(&xs, Origin::Historical).unwrap();
        let r = block_resample(&p, 1, 3).unwrap();
        assert_eq!(r.len(), 50);
        assert!(r.column(0).iter().all(|v| xs.contains(v)));
        assert_eq!(r.as_slice(), block_resample(&p, 1, 3).unwrap().as_slice());
        assert!(block_resample(&p, 0, 3).is_err());
        assert!(block_resample(&p, 51, 3).is_err());
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let path = toy_path(300);
        let cfg = BacktestConfig::default();
        assert_eq!(
            resampled_backtest(&path, &cfg, ResampleScheme::Identity, 99).unwrap(),
            standard_backtest(&path, &cfg).unwrap()
        );
    }

    #[test]
    fn single_bag_is_one_resample() {
        let path = toy_path(300);
        let cfg = BacktestConfig::default();
        let avg = bag_average(&path, &cfg, 1, ResampleScheme::IidShuffle, 4).unwrap();
        let one = resampled_backtest(&path, &cfg, ResampleScheme::IidShuffle, rng::derive_seed(4, &[0])).unwrap();
        assert_eq!(avg, one.sharpe);
    }

    #[test]
    fn identity_bags_are_perfectly_correlated() {
        let paths: Vec<SamplePath> = (0..20)
            .map(|k| {
                let obs = ObservableMoments::new(0.005, 0.004, 0.1, 0.3).unwrap();
                simulate_path(&[AssetSpec::new("a", obs).unwrap()], 200, k).unwrap()
            })
            .collect();
        let cfg = BacktestConfig::default();
        let rep = bagged_sharpe(&paths, &cfg, 8, ResampleScheme::Identity, 1).unwrap();
        assert_eq!(rep.rho, 1.0);
        assert!((rep.var_bagged - rep.var_single).abs() < 1e-12 * rep.var_single);
    }

    #[test]
    fn scheme_labels_parse_back() {
        for s in [ResampleScheme::Identity, ResampleScheme::IidShuffle, ResampleScheme::Block(7)] {
            assert_eq!(s.label().parse::<ResampleScheme>().unwrap(), s);
        }
        let json = serde_json::to_string(&ResampleScheme::Block(5)).unwrap();
        assert_eq!(json, r#"{"block":5}"#);
    }

    #[test]
    fn sample_size_scaling() {
        let base = PowerInputs::default();
        let n1 = required_sample_size_exact(&base).unwrap();
        let n2 = required_sample_size_exact(&PowerInputs {
            delta_sr_annual: 1.0,
            ..base
        })
        .unwrap();
        assert!((n1 / n2 - 4.0).abs() < 1e-12);
        let huge = PowerInputs {
            delta_sr_annual: 1e9,
            ..base
        };
        assert_eq!(required_sample_size(&huge).unwrap(), 1);
        let bad = PowerInputs { power: 1.0, ..base };
        assert!(matches!(required_sample_size(&bad), Err(BacktestError::InvalidProbability { .. })));
    }

    #[test]
    fn sample_size_hand_value() {
        // z_0.95 + z_0.8 = 1.644854 + 0.841621 = 2.486475; squared 6.182557
        // 6.182557 * 1.4 * 1.0072 / (0.25 / 12) = 418.46
        let n = required_sample_size_exact(&PowerInputs::default()).unwrap();
        assert!((n - 418.46).abs() < 0.01, "{n}");
        assert_eq!(required_sample_size(&PowerInputs::default()).unwrap(), 419);
    }
}
