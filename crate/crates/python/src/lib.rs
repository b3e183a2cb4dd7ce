//! Python bindings for `resample_lab`.
//!
//! Paths cross the boundary as row-major `list[list[float]]` (periods × assets);
//! scenario and empirical configs as JSON strings with the same schema as the CLI.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use resample_lab::analysis;
use resample_lab::backtest::{self, PowerInputs, ResampleScheme, Sided};
use resample_lab::dgp::{self, ObservableMoments, Origin, SamplePath};
use resample_lab::empirical;
use resample_lab::experiments;
use resample_lab::portfolio::{self, EstimatorMode};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_path(rows: Vec<Vec<f64>>) -> PyResult<SamplePath> {
    let periods = rows.len();
    let assets = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != assets) {
        return Err(value_error("rows must all have the same length"));
    }
    SamplePath::from_rows(rows.concat(), periods, assets, Origin::Historical).map_err(value_error)
}

fn to_rows(path: &SamplePath) -> Vec<Vec<f64>> {
    (0..path.len()).map(|t| path.row(t).to_vec()).collect()
}

fn scheme(label: &str) -> PyResult<ResampleScheme> {
    label.parse().map_err(value_error)
}

#[pyclass(name = "AssetSpec", module = "resample_lab_py", skip_from_py_object)]
#[derive(Clone)]
struct PyAssetSpec {
    inner: dgp::AssetSpec,
}

#[pymethods]
impl PyAssetSpec {
    #[new]
    #[pyo3(signature = (id, mu, sigma2_r, psi, r2, garch=None))]
    fn new(id: String, mu: f64, sigma2_r: f64, psi: f64, r2: f64, garch: Option<(f64, f64)>) -> PyResult<Self> {
        let obs = ObservableMoments::new(mu, sigma2_r, psi, r2).map_err(value_error)?;
        let mut inner = dgp::AssetSpec::new(id, obs).map_err(value_error)?;
        if let Some((alpha, beta)) = garch {
            inner = inner.with_garch(alpha, beta).map_err(value_error)?;
        }
        Ok(Self { inner })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta()
    }

    #[getter]
    fn psi(&self) -> f64 {
        self.inner.psi()
    }

    #[getter]
    fn svr(&self) -> f64 {
        self.inner.svr()
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.latent.phi
    }

    #[getter]
    fn sigma2_mu(&self) -> f64 {
        self.inner.latent.sigma2_mu
    }

    #[getter]
    fn sigma2_eta(&self) -> f64 {
        self.inner.latent.sigma2_eta
    }

    #[getter]
    fn sigma2_eps(&self) -> f64 {
        self.inner.latent.sigma2_eps
    }

    /// `(omega, alpha, beta)` or `None` for constant variance.
    #[getter]
    fn garch(&self) -> Option<(f64, f64, f64)> {
        self.inner.garch.map(|g| (g.omega, g.alpha, g.beta))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("spec serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "AssetSpec(id={:?}, theta={:.6}, psi={:.6}, phi={:.6})",
            self.inner.id,
            self.inner.theta(),
            self.inner.psi(),
            self.inner.latent.phi
        )
    }
}

#[pyclass(name = "BacktestConfig", module = "resample_lab_py", skip_from_py_object)]
#[derive(Clone)]
struct PyBacktestConfig {
    inner: portfolio::BacktestConfig,
}

#[pymethods]
impl PyBacktestConfig {
    /// `estimator` is one of `rolling_sample`, `rolling_diagonal`, `known_covariance`;
    /// the last needs `known_variances` (diagonal entries).
    #[new]
    #[pyo3(signature = (window=60, gamma=100.0, estimator="rolling_sample", known_variances=None, rf=0.0))]
    fn new(window: usize, gamma: f64, estimator: &str, known_variances: Option<Vec<f64>>, rf: f64) -> PyResult<Self> {
        let mode = match (estimator, known_variances) {
            ("rolling_sample", None) => EstimatorMode::RollingSample,
            ("rolling_diagonal", None) => EstimatorMode::RollingDiagonal,
            ("known_covariance", Some(v)) => EstimatorMode::known_diagonal(&v),
            (other, _) => return Err(value_error(format!("unsupported estimator setting {other:?}"))),
        };
        let mut inner = portfolio::BacktestConfig::new(window, gamma, mode);
        inner.rf = rf;
        inner.validate().map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.window
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    fn __repr__(&self) -> String {
        format!("BacktestConfig(window={}, gamma={})", self.inner.window, self.inner.gamma)
    }
}

#[pyclass(name = "MomentSummary", module = "resample_lab_py", skip_from_py_object, get_all)]
#[derive(Clone)]
struct PyMomentSummary {
    mu_p: f64,
    sigma2_p: f64,
    sharpe: f64,
    count: usize,
}

impl From<backtest::MomentSummary> for PyMomentSummary {
    fn from(m: backtest::MomentSummary) -> Self {
        Self {
            mu_p: m.mu_p,
            sigma2_p: m.sigma2_p,
            sharpe: m.sharpe,
            count: m.count,
        }
    }
}

#[pymethods]
impl PyMomentSummary {
    fn __repr__(&self) -> String {
        format!(
            "MomentSummary(mu_p={:.6e}, sigma2_p={:.6e}, sharpe={:.6}, count={})",
            self.mu_p, self.sigma2_p, self.sharpe, self.count
        )
    }
}

#[pyclass(name = "BoundSet", module = "resample_lab_py", skip_from_py_object, get_all)]
#[derive(Clone)]
struct PyBoundSet {
    mean_bound: f64,
    var_bound: f64,
    sr_analytical: f64,
    sr_numerical: f64,
    c: f64,
    flags: Vec<String>,
}

impl From<analysis::BoundSet> for PyBoundSet {
    fn from(b: analysis::BoundSet) -> Self {
        Self {
            mean_bound: b.mean_bound,
            var_bound: b.var_bound,
            sr_analytical: b.sr_analytical,
            sr_numerical: b.sr_numerical,
            c: b.c,
            flags: b.flags.iter().map(|f| f.label().to_string()).collect(),
        }
    }
}

#[pymethods]
impl PyBoundSet {
    fn __repr__(&self) -> String {
        format!(
            "BoundSet(mean={:.6e}, var={:.6e}, sr_analytical={:.6}, sr_numerical={:.6}, flags={:?})",
            self.mean_bound, self.var_bound, self.sr_analytical, self.sr_numerical, self.flags
        )
    }
}

#[pyclass(name = "BiasEstimate", module = "resample_lab_py", skip_from_py_object, get_all)]
#[derive(Clone)]
struct PyBiasEstimate {
    scheme: String,
    bias_mean: f64,
    bias_var: f64,
    bias_sr: f64,
    se_mean: f64,
    se_var: f64,
    se_sr: f64,
    standardized_sr: f64,
    paths: usize,
    failed_paths: usize,
}

impl From<analysis::BiasEstimate> for PyBiasEstimate {
    fn from(e: analysis::BiasEstimate) -> Self {
        Self {
            scheme: e.scheme.label(),
            standardized_sr: e.standardized_sr(),
            bias_mean: e.bias_mean,
            bias_var: e.bias_var,
            bias_sr: e.bias_sr,
            se_mean: e.se_mean,
            se_var: e.se_var,
            se_sr: e.se_sr,
            paths: e.paths,
            failed_paths: e.failed_paths,
        }
    }
}

#[pymethods]
impl PyBiasEstimate {
    fn __repr__(&self) -> String {
        format!(
            "BiasEstimate(scheme={}, mean={:.4e}±{:.1e}, var={:.4e}±{:.1e}, sr={:.4e}±{:.1e})",
            self.scheme, self.bias_mean, self.se_mean, self.bias_var, self.se_var, self.bias_sr, self.se_sr
        )
    }
}

fn specs_of(specs: Vec<PyRef<'_, PyAssetSpec>>) -> Vec<dgp::AssetSpec> {
    specs.iter().map(|s| s.inner.clone()).collect()
}

/// Simulated returns, `length` rows by one column per spec.
#[pyfunction]
fn simulate_path(specs: Vec<PyRef<'_, PyAssetSpec>>, length: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let path = dgp::simulate_path(&specs_of(specs), length, seed).map_err(value_error)?;
    Ok(to_rows(&path))
}

#[pyfunction]
fn realized_returns(rows: Vec<Vec<f64>>, cfg: PyRef<'_, PyBacktestConfig>) -> PyResult<Vec<f64>> {
    portfolio::realized_returns(&to_path(rows)?, &cfg.inner).map_err(value_error)
}

#[pyfunction]
fn standard_backtest(rows: Vec<Vec<f64>>, cfg: PyRef<'_, PyBacktestConfig>) -> PyResult<PyMomentSummary> {
    Ok(backtest::standard_backtest(&to_path(rows)?, &cfg.inner).map_err(value_error)?.into())
}

/// `scheme` is `identity`, `iid_shuffle` or `block_<b>`.
#[pyfunction]
fn resampled_backtest(
    rows: Vec<Vec<f64>>,
    cfg: PyRef<'_, PyBacktestConfig>,
    scheme: &str,
    seed: u64,
) -> PyResult<PyMomentSummary> {
    let m = backtest::resampled_backtest(&to_path(rows)?, &cfg.inner, self::scheme(scheme)?, seed).map_err(value_error)?;
    Ok(m.into())
}

#[pyfunction]
fn shuffle_path(rows: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&backtest::shuffle_path(&to_path(rows)?, seed)))
}

#[pyfunction]
fn block_resample(rows: Vec<Vec<f64>>, b: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&backtest::block_resample(&to_path(rows)?, b, seed).map_err(value_error)?))
}

#[pyfunction]
fn sum_a(n: usize, phi: f64) -> f64 {
    analysis::sum_a(n, phi)
}

#[pyfunction]
fn sum_b(n: usize, phi: f64) -> f64 {
    analysis::sum_b(n, phi)
}

#[pyfunction]
fn theoretical_bias_mean(spec: PyRef<'_, PyAssetSpec>, n: usize, gamma: f64) -> f64 {
    analysis::theoretical_bias_mean(&spec.inner, n, gamma)
}

#[pyfunction]
fn theoretical_bias_var(spec: PyRef<'_, PyAssetSpec>, n: usize, gamma: f64) -> f64 {
    analysis::theoretical_bias_var(&spec.inner, n, gamma)
}

#[pyfunction]
fn theoretical_bias_sr(spec: PyRef<'_, PyAssetSpec>, n: usize) -> PyResult<f64> {
    analysis::theoretical_bias_sr(&spec.inner, n).map_err(value_error)
}

#[pyfunction]
fn bounds(theta: f64, psi: f64, gamma: f64, n: usize) -> PyBoundSet {
    analysis::bounds(theta, psi, gamma, n).into()
}

/// `(ttd, wtd)` estimated from a return series.
#[pyfunction]
fn dependence_components(series: Vec<f64>, n: usize) -> PyResult<(f64, f64)> {
    let d = analysis::dependence_components_empirical(&series, n).map_err(value_error)?;
    Ok((d.ttd, d.wtd))
}

#[pyfunction]
#[pyo3(signature = (specs, cfg, paths, length, seed, scheme="iid_shuffle"))]
fn mc_bias(
    py: Python<'_>,
    specs: Vec<PyRef<'_, PyAssetSpec>>,
    cfg: PyRef<'_, PyBacktestConfig>,
    paths: usize,
    length: usize,
    seed: u64,
    scheme: &str,
) -> PyResult<PyBiasEstimate> {
    let specs = specs_of(specs);
    let cfg = cfg.inner.clone();
    let scheme = self::scheme(scheme)?;
    let e = py
        .detach(|| analysis::mc_bias(&specs, &cfg, paths, length, seed, scheme))
        .map_err(value_error)?;
    Ok(e.into())
}

#[pyfunction]
#[pyo3(signature = (delta_sr_annual=0.5, power=0.8, alpha=0.05, theta_monthly=0.12, corr=0.3, two_sided=false))]
fn required_sample_size(
    delta_sr_annual: f64,
    power: f64,
    alpha: f64,
    theta_monthly: f64,
    corr: f64,
    two_sided: bool,
) -> PyResult<u64> {
    let inputs = PowerInputs {
        delta_sr_annual,
        power,
        alpha,
        theta_monthly,
        corr,
        sided: if two_sided { Sided::Two } else { Sided::One },
    };
    backtest::required_sample_size(&inputs).map_err(value_error)
}

/// Runs the bias cross-section for a JSON scenario config; returns the reports as JSON.
#[pyfunction]
#[pyo3(signature = (config_json="{}"))]
fn run_cross_section(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: experiments::ScenarioConfig = serde_json::from_str(config_json).map_err(value_error)?;
    let reports = py
        .detach(|| experiments::run_bias_cross_section(&cfg))
        .map_err(value_error)?;
    serde_json::to_string(&reports).map_err(value_error)
}

/// Runs the empirical pipeline on a return CSV; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (csv_path, config_json="{}"))]
fn run_empirical(py: Python<'_>, csv_path: &str, config_json: &str) -> PyResult<String> {
    let cfg: empirical::EmpiricalConfig = serde_json::from_str(config_json).map_err(value_error)?;
    let table = empirical::load_returns_file(std::path::Path::new(csv_path)).map_err(value_error)?;
    let report = py
        .detach(|| empirical::run_empirical(&table, &cfg))
        .map_err(value_error)?;
    serde_json::to_string(&report).map_err(value_error)
}

#[pymodule]
fn resample_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAssetSpec>()?;
    m.add_class::<PyBacktestConfig>()?;
    m.add_class::<PyMomentSummary>()?;
    m.add_class::<PyBoundSet>()?;
    m.add_class::<PyBiasEstimate>()?;
    m.add_function(wrap_pyfunction!(simulate_path, m)?)?;
    m.add_function(wrap_pyfunction!(realized_returns, m)?)?;
    m.add_function(wrap_pyfunction!(standard_backtest, m)?)?;
    m.add_function(wrap_pyfunction!(resampled_backtest, m)?)?;
    m.add_function(wrap_pyfunction!(shuffle_path, m)?)?;
    m.add_function(wrap_pyfunction!(block_resample, m)?)?;
    m.add_function(wrap_pyfunction!(sum_a, m)?)?;
    m.add_function(wrap_pyfunction!(sum_b, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_bias_mean, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_bias_var, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_bias_sr, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(dependence_components, m)?)?;
    m.add_function(wrap_pyfunction!(mc_bias, m)?)?;
    m.add_function(wrap_pyfunction!(required_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(run_cross_section, m)?)?;
    m.add_function(wrap_pyfunction!(run_empirical, m)?)?;
    Ok(())
}
