//! Asset return processes: an AR(1) time-varying risk premium plus Gaussian
//! or GARCH(1,1) noise, calibrated from observable return moments.
//!
//! ```text
//! R_t  = μ_t + ε_t
//! μ_t  = μ(1 − φ) + φ μ_{t−1} + η_t,   η_t ~ N(0, σ_η²)
//! ε_t ~ N(0, σ_ε²)  or  ε_t ~ N(0, σ_t²),  σ_t² = ω + α ε_{t−1}² + β σ_{t−1}²
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::ResampleScheme;
use crate::rng;

/// Lower and upper edge of the admissible GARCH persistence `α + β`.
pub const GARCH_PERSISTENCE_RANGE: (f64, f64) = (0.74, 0.98);

/// Persistence used when the caller asks for out-of-range `φ` to be clipped.
pub const PHI_CLIP: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgpError {
    #[error("invalid observable moments: {0}")]
    InvalidObservables(String),
    #[error("implied AR(1) persistence {phi} is outside (-1, 1); |psi| must be below r2")]
    PhiOutOfRange { phi: f64 },
    #[error("psi = {psi} is non-zero but r2 = 0 leaves no signal to carry it")]
    DegenerateSignal { psi: f64 },
    #[error("GARCH beta = {beta} alone exceeds the persistence ceiling 0.98")]
    InfeasibleClip { beta: f64 },
    #[error("invalid GARCH coefficients: {0}")]
    InvalidGarch(String),
    #[error("invalid sample path: {0}")]
    InvalidPath(String),
}

/// Observable monthly return moments of one asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableMoments {
    /// Mean monthly return (decimal).
    pub mu: f64,
    /// Monthly return variance.
    #[serde(rename = "sigma2_R", alias = "sigma2_r")]
    pub sigma2_r: f64,
    /// Lag-1 return autocorrelation.
    pub psi: f64,
    /// Signal-variance ratio `σ_μ² / σ_R²`.
    pub r2: f64,
}

impl ObservableMoments {
    pub fn new(mu: f64, sigma2_r: f64, psi: f64, r2: f64) -> Result<Self, DgpError> {
        let obs = Self { mu, sigma2_r, psi, r2 };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let bad = |m: &str| Err(DgpError::InvalidObservables(m.to_string()));
        if !(self.sigma2_r > 0.0 && self.sigma2_r.is_finite()) {
            return bad("sigma2_R must be positive and finite");
        }
        if !(self.psi.abs() < 1.0) {
            return bad("|psi| must be below 1");
        }
        if !(0.0..1.0).contains(&self.r2) {
            return bad("r2 must lie in [0, 1)");
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite");
        }
        Ok(())
    }

    /// Sharpe ratio of the asset, `μ / σ_R`.
    pub fn theta(&self) -> f64 {
        self.mu / self.sigma2_r.sqrt()
    }
}

/// Latent AR(1) premium parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub phi: f64,
    pub sigma2_mu: f64,
    pub sigma2_eta: f64,
    pub sigma2_eps: f64,
    pub intercept: f64,
}

/// What to do when the observables imply `|φ| ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiPolicy {
    #[default]
    Strict,
    /// Clip `φ` to `±0.999`; the simulated lag-1 autocorrelation then differs from `psi`.
    Clip,
}

/// Maps observable moments onto the latent premium process:
/// `σ_μ² = r2·σ_R²`, `φ = ψ σ_R² / σ_μ²`, `σ_η² = σ_μ²(1 − φ²)`.
pub fn derive_latent_params(obs: &ObservableMoments) -> Result<LatentParams, DgpError> {
    derive_latent_params_with(obs, PhiPolicy::Strict)
}

pub fn derive_latent_params_with(
    obs: &ObservableMoments,
    policy: PhiPolicy,
) -> Result<LatentParams, DgpError> {
    obs.validate()?;
    let sigma2_mu = obs.r2 * obs.sigma2_r;
    let phi = if obs.r2 == 0.0 {
        if obs.psi != 0.0 {
            return Err(DgpError::DegenerateSignal { psi: obs.psi });
        }
        0.0
    } else {
        let phi = obs.psi * obs.sigma2_r / sigma2_mu;
        if phi.abs() >= 1.0 {
            match policy {
                PhiPolicy::Strict => return Err(DgpError::PhiOutOfRange { phi }),
                PhiPolicy::Clip => PHI_CLIP.copysign(phi),
            }
        } else {
            phi
        }
    };
    Ok(LatentParams {
        phi,
        sigma2_mu,
        sigma2_eta: sigma2_mu * (1.0 - phi * phi),
        sigma2_eps: obs.sigma2_r - sigma2_mu,
        intercept: obs.mu * (1.0 - phi),
    })
}

/// GARCH(1,1) noise with unconditional variance `ω / (1 − α − β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchSpec {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GarchSpec {
    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.beta)
    }
}

/// Targets the noise variance `σ_ε²` with `ω = σ_ε²(1 − α − β)`, moving `α`
/// so that `α + β` lands on the nearer edge of `[0.74, 0.98]` when outside it.
pub fn garch_calibrate(latent: &LatentParams, alpha: f64, beta: f64) -> Result<GarchSpec, DgpError> {
    if !(alpha >= 0.0 && beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(DgpError::InvalidGarch(format!(
            "alpha = {alpha}, beta = {beta} must be non-negative"
        )));
    }
    let (lo, hi) = GARCH_PERSISTENCE_RANGE;
    if beta > hi {
        return Err(DgpError::InfeasibleClip { beta });
    }
    let alpha = if alpha + beta > hi {
        hi - beta
    } else if alpha + beta < lo {
        lo - beta
    } else {
        alpha
    };
    Ok(GarchSpec {
        omega: latent.sigma2_eps * (1.0 - alpha - beta),
        alpha,
        beta,
    })
}

/// One asset's return process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAssetSpec")]
pub struct AssetSpec {
    pub id: String,
    pub observables: ObservableMoments,
    pub latent: LatentParams,
    pub garch: Option<GarchSpec>,
}

/// GARCH block as written in spec files: raw coefficients, calibrated on load.
#[derive(Debug, Clone, Copy, Deserialize)]
struct RawGarch {
    alpha: f64,
    beta: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RawAssetSpec {
    id: String,
    observables: ObservableMoments,
    #[serde(default)]
    garch: Option<RawGarch>,
    #[serde(default)]
    phi_policy: PhiPolicy,
}

impl TryFrom<RawAssetSpec> for AssetSpec {
    type Error = DgpError;

    fn try_from(raw: RawAssetSpec) -> Result<Self, Self::Error> {
        let spec = AssetSpec::with_policy(raw.id, raw.observables, raw.phi_policy)?;
        match raw.garch {
            Some(g) => spec.with_garch(g.alpha, g.beta),
            None => Ok(spec),
        }
    }
}

impl AssetSpec {
    pub fn new(id: impl Into<String>, observables: ObservableMoments) -> Result<Self, DgpError> {
        Self::with_policy(id, observables, PhiPolicy::Strict)
    }

    pub fn with_policy(
        id: impl Into<String>,
        observables: ObservableMoments,
        policy: PhiPolicy,
    ) -> Result<Self, DgpError> {
        let latent = derive_latent_params_with(&observables, policy)?;
        Ok(Self {
            id: id.into(),
            observables,
            latent,
            garch: None,
        })
    }

    pub fn with_garch(mut self, alpha: f64, beta: f64) -> Result<Self, DgpError> {
        self.garch = Some(garch_calibrate(&self.latent, alpha, beta)?);
        Ok(self)
    }

    pub fn without_garch(&self) -> Self {
        Self {
            garch: None,
            ..self.clone()
        }
    }

    pub fn theta(&self) -> f64 {
        self.observables.theta()
    }

    /// Model lag-1 autocorrelation `φ σ_μ² / σ_R²`.
    pub fn psi(&self) -> f64 {
        self.latent.phi * self.svr()
    }

    /// Signal-variance ratio `σ_μ² / σ_R²`.
    pub fn svr(&self) -> f64 {
        self.latent.sigma2_mu / self.observables.sigma2_r
    }
}

/// Where a sample path came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Simulated,
    Historical,
    Resampled(ResampleScheme),
}

/// A `T × M` matrix of monthly returns stored row-major (one row per period).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    returns: Vec<f64>,
    periods: usize,
    assets: usize,
    /// Generating specs; empty for historical data.
    pub specs: Vec<AssetSpec>,
    pub seed: Option<u64>,
    pub origin: Origin,
}

impl SamplePath {
    /// Builds a path from row-major data. Every entry must be finite.
    pub fn from_rows(
        returns: Vec<f64>,
        periods: usize,
        assets: usize,
        origin: Origin,
    ) -> Result<Self, DgpError> {
        if periods == 0 || assets == 0 {
            return Err(DgpError::InvalidPath("path must have at least one row and column".into()));
        }
        if returns.len() != periods * assets {
            return Err(DgpError::InvalidPath(format!(
                "expected {} entries, got {}",
                periods * assets,
                returns.len()
            )));
        }
        if let Some(i) = returns.iter().position(|v| !v.is_finite()) {
            return Err(DgpError::InvalidPath(format!(
                "non-finite value at row {}, column {}",
                i / assets,
                i % assets
            )));
        }
        Ok(Self {
            returns,
            periods,
            assets,
            specs: Vec::new(),
            seed: None,
            origin,
        })
    }

    /// Single-asset path from a return series.
    pub fn from_series(series: &[f64], origin: Origin) -> Result<Self, DgpError> {
        Self::from_rows(series.to_vec(), series.len(), 1, origin)
    }

    pub fn len(&self) -> usize {
        self.periods
    }

    pub fn is_empty(&self) -> bool {
        self.periods == 0
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.returns[t * self.assets..(t + 1) * self.assets]
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.returns[t * self.assets + m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.returns
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        (0..self.periods).map(|t| self.get(t, m)).collect()
    }

    /// New path with the rows taken in `order`, keeping the cross-section intact.
    pub(crate) fn reorder(&self, order: &[usize], origin: Origin) -> Self {
        let mut returns = Vec::with_capacity(order.len() * self.assets);
        for &t in order {
            returns.extend_from_slice(self.row(t));
        }
        Self {
            returns,
            periods: order.len(),
            assets: self.assets,
            specs: self.specs.clone(),
            seed: self.seed,
            origin,
        }
    }
}

/// Simulates `length` periods for every spec. Asset `m` draws from its own
/// stream seeded by `derive_seed(seed, [m])`, so a column depends only on
/// `(spec, seed, m)` and not on the other assets.
pub fn simulate_path(specs: &[AssetSpec], length: usize, seed: u64) -> Result<SamplePath, DgpError> {
    if length < 2 {
        return Err(DgpError::InvalidPath("simulated paths need at least 2 periods".into()));
    }
    if specs.is_empty() {
        return Err(DgpError::InvalidPath("no asset specs given".into()));
    }
    let assets = specs.len();
    let mut returns = vec![0.0; length * assets];
    for (m, spec) in specs.iter().enumerate() {
        spec.observables.validate()?;
        let mut rng = rng::derived_rng(seed, &[m as u64]);
        simulate_column(spec, &mut rng, |t, r| returns[t * assets + m] = r, length);
    }
    Ok(SamplePath {
        returns,
        periods: length,
        assets,
        specs: specs.to_vec(),
        seed: Some(seed),
        origin: Origin::Simulated,
    })
}

fn simulate_column<R: Rng>(spec: &AssetSpec, rng: &mut R, mut put: impl FnMut(usize, f64), length: usize) {
    let lat = &spec.latent;
    let eta_sd = lat.sigma2_eta.sqrt();
    let draw = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };

    // μ_1 from the stationary law N(μ, σ_η² / (1 − φ²)).
    let mut premium = spec.observables.mu + lat.sigma2_mu.sqrt() * draw(rng);
    let mut cond_var = lat.sigma2_eps;
    let mut prev_eps = 0.0;
    for t in 0..length {
        if t > 0 {
            premium = lat.intercept + lat.phi * premium + eta_sd * draw(rng);
        }
        let eps = match &spec.garch {
            None => lat.sigma2_eps.sqrt() * draw(rng),
            Some(g) => {
                if t > 0 {
                    cond_var = g.omega + g.alpha * prev_eps * prev_eps + g.beta * cond_var;
                }
                cond_var.sqrt() * draw(rng)
            }
        };
        prev_eps = eps;
        put(t, premium + eps);
    }
}
