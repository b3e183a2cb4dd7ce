//! Bias of resampled backtests for rolling-window mean-variance portfolio rules.
//!
//! The crate simulates AR(1) risk-premium return processes (optionally with
//! GARCH(1,1) noise), runs standard and resampled backtests of the rolling
//! mean-variance rule, evaluates the closed-form bias expressions and bounds,
//! and orchestrates the Monte Carlo and historical-data studies.

pub mod analysis;
pub mod backtest;
pub mod dgp;
pub mod empirical;
pub mod experiments;
pub mod output;
pub mod portfolio;
pub mod rng;
pub mod stats;

pub use analysis::{BiasEstimate, BoundSet, DependenceComponents};
pub use backtest::{MomentSummary, ResampleScheme};
pub use dgp::{AssetSpec, GarchSpec, LatentParams, ObservableMoments, SamplePath};
pub use portfolio::{BacktestConfig, EstimatorMode};
