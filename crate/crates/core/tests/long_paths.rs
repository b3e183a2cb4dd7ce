use resample_lab::backtest::{self, ResampleScheme};
use resample_lab::dgp::{simulate_path, AssetSpec, ObservableMoments, SamplePath};
use resample_lab::portfolio::{BacktestConfig, EstimatorMode};
use resample_lab::rng::derive_seed;
use resample_lab::stats;

const T: usize = 1_000_000;

fn spec() -> AssetSpec {
    AssetSpec::new("long", ObservableMoments::new(0.006, 0.0025, 0.12, 0.3).unwrap()).unwrap()
}

#[test]
fn long_path_matches_observables() {
    let spec = spec();
    let obs = spec.observables;
    let phi = spec.latent.phi;
    let x = simulate_path(std::slice::from_ref(&spec), T, 41).unwrap().column(0);
    let tf = T as f64;

    let long_run_var = obs.sigma2_r + 2.0 * spec.latent.sigma2_mu * phi / (1.0 - phi);
    let se_mean = (long_run_var / tf).sqrt();
    assert!((stats::mean(&x) - obs.mu).abs() <= 3.0 * se_mean);

    let rho_sq = obs.psi * obs.psi / (1.0 - phi * phi);
    let se_var = obs.sigma2_r * (2.0 * (1.0 + 2.0 * rho_sq) / tf).sqrt();
    assert!((stats::sample_variance(&x) - obs.sigma2_r).abs() <= 3.0 * se_var);

    let se_psi = ((1.0 + 2.0 * rho_sq) / tf).sqrt();
    assert!((stats::lag1_autocorrelation(&x) - obs.psi).abs() <= 3.0 * se_psi);
}

#[test]
fn garch_keeps_long_run_variance() {
    let constant = spec();
    let garch = constant.clone().with_garch(0.05, 0.85).unwrap();
    let a = simulate_path(std::slice::from_ref(&constant), T, 42).unwrap().column(0);
    let b = simulate_path(std::slice::from_ref(&garch), T, 43).unwrap().column(0);
    let (va, vb) = (stats::sample_variance(&a), stats::sample_variance(&b));
    assert!((va - vb).abs() / va <= 0.01, "{va} vs {vb}");
}

#[test]
fn bagging_reduces_variance() {
    let spec = spec();
    let cfg = BacktestConfig::new(60, 100.0, EstimatorMode::RollingSample);
    let paths: Vec<SamplePath> = (0..200)
        .map(|r| simulate_path(std::slice::from_ref(&spec), 240, derive_seed(44, &[r])).unwrap())
        .collect();
    let two = backtest::bagged_sharpe(&paths, &cfg, 2, ResampleScheme::IidShuffle, 45).unwrap();
    let many = backtest::bagged_sharpe(&paths, &cfg, 32, ResampleScheme::IidShuffle, 45).unwrap();
    assert!(many.var_bagged < two.var_bagged);
    assert!((-1.0..=1.0).contains(&many.rho));
    assert!(many.var_bagged <= many.var_single * 1.05);
}
