//! Small descriptive statistics and least-squares helpers shared by the
//! analysis, empirical, and experiments modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("regression design is rank deficient: {0}")]
    RankDeficient(String),
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor `N - 1` (corrected two-pass, so a constant
/// input gives exactly zero).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let (mut ss, mut s) = (0.0, 0.0);
    for x in xs {
        let d = x - m;
        ss += d * d;
        s += d;
    }
    ((ss - s * s / xs.len() as f64) / (xs.len() as f64 - 1.0)).max(0.0)
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Sample autocovariances `γ̂(0..=max_lag)` with divisor `T` about the sample mean.
pub fn autocovariance(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let len = xs.len();
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    (0..=max_lag)
        .map(|k| {
            if k >= len {
                return 0.0;
            }
            centered[..len - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / len as f64
        })
        .collect()
}

/// Lag-1 sample autocorrelation `γ̂(1) / γ̂(0)`.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let acov = autocovariance(xs, 1);
    acov[1] / acov[0]
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Percentile with linear interpolation between order statistics
/// (`q` in `[0, 1]`). Returns NaN for an empty slice.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Ordinary least squares fit with an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub intercept_se: f64,
    pub slopes: Vec<f64>,
    pub slope_ses: Vec<f64>,
    pub r2: f64,
    pub f_statistic: f64,
    pub f_p_value: f64,
    pub observations: usize,
}

/// Regresses `y` on the columns of `xs` (each inner vector one regressor)
/// with an intercept. Regressors are centred and scaled before solving so
/// that small-magnitude inputs (autocovariances ~1e-5) are well conditioned.
pub fn ols(y: &[f64], xs: &[Vec<f64>]) -> Result<OlsFit, StatsError> {
    let n = y.len();
    let p = xs.len();
    if n < p + 1 {
        return Err(StatsError::TooFewObservations { needed: p + 1, got: n });
    }
    let y_mean = mean(y);
    let sst: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    if sst <= 0.0 {
        return Err(StatsError::RankDeficient("response is constant".into()));
    }

    let mut x_means = Vec::with_capacity(p);
    let mut x_scales = Vec::with_capacity(p);
    let mut design = DMatrix::<f64>::zeros(n, p);
    for (j, col) in xs.iter().enumerate() {
        let m = mean(col);
        let scale = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(StatsError::RankDeficient(format!("regressor {j} is constant")));
        }
        for (i, v) in col.iter().enumerate() {
            design[(i, j)] = (v - m) / scale;
        }
        x_means.push(m);
        x_scales.push(scale);
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let (beta_scaled, xtx_inv) = if p == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        let xtx = design.transpose() * &design;
        let svd = xtx.clone().svd(false, false);
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        if min_sv <= max_sv * 1e-12 {
            return Err(StatsError::RankDeficient("regressors are collinear".into()));
        }
        let inv = xtx
            .try_inverse()
            .ok_or_else(|| StatsError::RankDeficient("normal matrix not invertible".into()))?;
        let beta = &inv * (design.transpose() * &yc);
        (beta, inv)
    };

    let fitted = &design * &beta_scaled;
    let ssr: f64 = (&yc - &fitted).iter().map(|r| r * r).sum();
    let r2 = (1.0 - ssr / sst).clamp(0.0, 1.0);
    let df_resid = n as f64 - p as f64 - 1.0;
    let sigma2 = if df_resid > 0.0 { ssr / df_resid } else { f64::NAN };

    let slopes: Vec<f64> = (0..p).map(|j| beta_scaled[j] / x_scales[j]).collect();
    let slope_ses: Vec<f64> = (0..p)
        .map(|j| (sigma2 * xtx_inv[(j, j)]).sqrt() / x_scales[j])
        .collect();
    let intercept = y_mean - slopes.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    // var(α̂) = σ²/n + x̄' var(β̂) x̄ for a centred design.
    let mut quad = 0.0;
    for j in 0..p {
        for k in 0..p {
            let cov_jk = sigma2 * xtx_inv[(j, k)] / (x_scales[j] * x_scales[k]);
            quad += x_means[j] * cov_jk * x_means[k];
        }
    }
    let intercept_se = (sigma2 / n as f64 + quad).sqrt();

    let (f_statistic, f_p_value) = if p == 0 || df_resid <= 0.0 {
        (f64::NAN, f64::NAN)
    } else if ssr <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = ((sst - ssr) / p as f64) / (ssr / df_resid);
        let dist = FisherSnedecor::new(p as f64, df_resid).expect("positive degrees of freedom");
        (f, dist.sf(f))
    };

    Ok(OlsFit {
        intercept,
        intercept_se,
        slopes,
        slope_ses,
        r2,
        f_statistic,
        f_p_value,
        observations: n,
    })
}
