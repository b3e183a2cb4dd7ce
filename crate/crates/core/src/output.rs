//! Report files: plot-ready CSV tables, JSON reports, and the run manifest.
//!
//! Floats are written with 9 significant digits so repeated runs can be
//! compared byte for byte.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::empirical::{DifferenceRecord, RegressionEntry, StudentizedSummary};
use crate::experiments::{BlocksizeReport, CrossSectionReport, DimensionReport};

/// Float with 9 significant digits; `NaN`/`inf` spelled out.
pub fn fmt9(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.8e}")
    }
}

fn opt9(x: Option<f64>) -> String {
    x.map(fmt9).unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

// ─── Simulation tables ──────────────────────────────────────────────────────

pub const FIG1: &str = "fig1_ratios.csv";
pub const TABLE1: &str = "table1_r2.csv";
pub const TABLE2: &str = "table2_percentiles.csv";
pub const FIG4: &str = "fig4_dimension.csv";
pub const FIG5: &str = "fig5_blocksize.csv";
pub const FIG8: &str = "fig8_coupling.csv";
pub const DIFFERENCES: &str = "differences.csv";
pub const REGRESSIONS: &str = "regressions.json";
pub const TABLE3: &str = "table3_studentized.csv";
pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";

/// Per-asset rows with bounds, biases, ratios and standardized biases.
pub fn write_fig1(path: &Path, reports: &[CrossSectionReport]) -> io::Result<()> {
    let header = [
        "noise", "scheme", "asset_id", "theta", "psi", "svr", "phi", "ttd", "wtd", "bias_mean", "bias_var",
        "bias_sr", "se_mean", "se_var", "se_sr", "bound_mean", "bound_var", "bound_sr_numerical",
        "bound_sr_analytical", "ratio_mean", "ratio_var", "ratio_sr", "std_mean", "std_var", "std_sr",
        "theory_mean", "theory_var", "theory_sr", "flags",
    ];
    let mut rows = Vec::new();
    for rep in reports {
        for r in &rep.rows {
            let e = &r.estimate;
            rows.push(vec![
                rep.noise.label().to_string(),
                rep.scheme.label(),
                r.asset_id.clone(),
                fmt9(r.theta),
                fmt9(r.psi),
                fmt9(r.svr),
                fmt9(r.phi),
                fmt9(r.dependence.ttd),
                fmt9(r.dependence.wtd),
                fmt9(e.bias_mean),
                fmt9(e.bias_var),
                fmt9(e.bias_sr),
                fmt9(e.se_mean),
                fmt9(e.se_var),
                fmt9(e.se_sr),
                fmt9(r.bounds.mean_bound),
                fmt9(r.bounds.var_bound),
                fmt9(r.bounds.sr_numerical),
                fmt9(r.bounds.sr_analytical),
                fmt9(r.ratio_mean),
                fmt9(r.ratio_var),
                fmt9(r.ratio_sr),
                fmt9(r.std_mean),
                fmt9(r.std_var),
                fmt9(r.std_sr),
                fmt9(r.theory_mean),
                fmt9(r.theory_var),
                opt9(r.theory_sr),
                r.bounds.flag_labels(),
            ]);
        }
    }
    write_csv(path, &header, rows)
}

pub fn write_table1(path: &Path, reports: &[CrossSectionReport]) -> io::Result<()> {
    let header = ["noise", "scheme", "statistic", "regressor", "r2", "slope", "intercept", "f_p_value", "error"];
    let mut rows = Vec::new();
    for rep in reports {
        for e in &rep.r2 {
            let f = e.fit.as_ref();
            rows.push(vec![
                rep.noise.label().to_string(),
                rep.scheme.label(),
                e.statistic.clone(),
                e.regressor.clone(),
                opt9(f.map(|f| f.r2)),
                opt9(f.map(|f| f.slopes[0])),
                opt9(f.map(|f| f.intercept)),
                opt9(f.map(|f| f.f_p_value)),
                e.error.clone().unwrap_or_default(),
            ]);
        }
    }
    write_csv(path, &header, rows)
}

pub fn write_table2(path: &Path, reports: &[CrossSectionReport]) -> io::Result<()> {
    let header = ["noise", "scheme", "percentile", "mean", "variance", "sharpe"];
    let mut rows = Vec::new();
    for rep in reports {
        for (q, v) in rep.percentiles.percentiles.iter().zip(&rep.percentiles.values) {
            rows.push(vec![
                rep.noise.label().to_string(),
                rep.scheme.label(),
                fmt9(*q),
                fmt9(v[0]),
                fmt9(v[1]),
                fmt9(v[2]),
            ]);
        }
    }
    write_csv(path, &header, rows)
}

/// Per-asset bias pairs; the fitted line is repeated on each row.
pub fn write_fig8(path: &Path, reports: &[CrossSectionReport]) -> io::Result<()> {
    let header = [
        "noise", "scheme", "asset_id", "bias_mean", "bias_var", "fit_slope", "fit_intercept", "fit_r2",
    ];
    let mut rows = Vec::new();
    for rep in reports {
        let c = rep.coupling.as_ref();
        for r in &rep.rows {
            rows.push(vec![
                rep.noise.label().to_string(),
                rep.scheme.label(),
                r.asset_id.clone(),
                fmt9(r.estimate.bias_mean),
                fmt9(r.estimate.bias_var),
                opt9(c.map(|c| c.slopes[0])),
                opt9(c.map(|c| c.intercept)),
                opt9(c.map(|c| c.r2)),
            ]);
        }
    }
    write_csv(path, &header, rows)
}

pub fn write_fig4(path: &Path, rep: &DimensionReport) -> io::Result<()> {
    let header = [
        "m", "bias_mean", "bias_var", "bias_sr", "se_mean", "se_var", "se_sr", "se_standard_mean",
        "se_standard_var", "se_standard_sr", "std_mean", "std_var", "std_sr", "std_sr_se",
    ];
    let rows = rep
        .points
        .iter()
        .map(|p| {
            let e = &p.estimate;
            vec![
                p.m.to_string(),
                fmt9(e.bias_mean),
                fmt9(e.bias_var),
                fmt9(e.bias_sr),
                fmt9(e.se_mean),
                fmt9(e.se_var),
                fmt9(e.se_sr),
                fmt9(e.se_standard_mean),
                fmt9(e.se_standard_var),
                fmt9(e.se_standard_sr),
                fmt9(p.std_mean),
                fmt9(p.std_var),
                fmt9(p.std_sr),
                fmt9(p.std_sr_se),
            ]
        })
        .collect();
    write_csv(path, &header, rows)
}

pub fn write_fig5(path: &Path, rep: &BlocksizeReport) -> io::Result<()> {
    let header = ["b", "mean_abs_bias_sr", "se", "normalized", "normalized_se"];
    let rows = rep
        .points
        .iter()
        .map(|p| {
            vec![
                p.b.to_string(),
                fmt9(p.mean_abs_bias_sr),
                fmt9(p.se),
                fmt9(p.normalized),
                fmt9(p.normalized_se),
            ]
        })
        .collect();
    write_csv(path, &header, rows)
}

// ─── Empirical tables ───────────────────────────────────────────────────────

pub fn write_differences(path: &Path, records: &[DifferenceRecord]) -> io::Result<()> {
    let header = [
        "asset_id", "d_mean", "d_var", "d_sr", "standard_mean", "standard_var", "standard_sr", "se_diff_mean",
        "se_diff_var", "se_diff_sr", "se_standard_mean", "se_standard_var", "se_standard_sr", "p_mean", "p_var",
        "p_sr", "theta_hat", "psi_hat", "bound_mean", "bound_var", "bound_sr_numerical", "bound_sr_analytical",
        "ratio_mean", "ratio_var", "ratio_sr", "ttd", "wtd", "flags",
    ];
    let rows = records
        .iter()
        .map(|r| {
            let b = r.bounds.as_ref();
            let ratio = |d: f64, bound: Option<f64>| opt9(bound.map(|x| crate::analysis::abs_ratio(d, x)));
            vec![
                r.asset_id.clone(),
                fmt9(r.d_mean),
                fmt9(r.d_var),
                fmt9(r.d_sr),
                fmt9(r.standard.mu_p),
                fmt9(r.standard.sigma2_p),
                fmt9(r.standard.sharpe),
                opt9(r.se_diff_mean),
                opt9(r.se_diff_var),
                opt9(r.se_diff_sr),
                opt9(r.se_standard_mean),
                opt9(r.se_standard_var),
                opt9(r.se_standard_sr),
                opt9(r.p_mean),
                opt9(r.p_var),
                opt9(r.p_sr),
                opt9(b.map(|b| b.theta)),
                opt9(b.map(|b| b.psi)),
                opt9(b.map(|b| b.mean_bound)),
                opt9(b.map(|b| b.var_bound)),
                opt9(b.map(|b| b.sr_numerical)),
                opt9(b.map(|b| b.sr_analytical)),
                ratio(r.d_mean, b.map(|b| b.mean_bound)),
                ratio(r.d_var, b.map(|b| b.var_bound)),
                ratio(r.d_sr, b.map(|b| b.sr_numerical)),
                opt9(r.dependence.map(|d| d.ttd)),
                opt9(r.dependence.map(|d| d.wtd)),
                b.map(|b| b.flag_labels()).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(path, &header, rows)
}

pub fn write_table3(path: &Path, summary: &StudentizedSummary) -> io::Result<()> {
    let header = ["section", "row", "mean", "variance", "sharpe"];
    let mut rows = Vec::new();
    for (section, pcts, reject) in [
        ("difference_se", &summary.diff_se, summary.reject_diff),
        ("standard_se", &summary.standard_se, summary.reject_standard),
    ] {
        for (q, v) in summary.percentiles.iter().zip(pcts.iter()) {
            rows.push(vec![section.into(), fmt9(*q), fmt9(v[0]), fmt9(v[1]), fmt9(v[2])]);
        }
        rows.push(vec![
            section.into(),
            "reject_share".into(),
            fmt9(reject[0]),
            fmt9(reject[1]),
            fmt9(reject[2]),
        ]);
    }
    write_csv(path, &header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionsFile {
    pub assets: usize,
    pub regressions: Vec<RegressionEntry>,
}

// ─── Reports and manifest ───────────────────────────────────────────────────

/// Everything a run produced, enough to re-render every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunReport {
    Simulate {
        cross_section: Vec<CrossSectionReport>,
    },
    Sweep {
        blocksize: Option<BlocksizeReport>,
        dimension: Option<DimensionReport>,
    },
    Empirical {
        records: Vec<DifferenceRecord>,
        failures: Vec<crate::empirical::AssetFailure>,
        regressions: Vec<RegressionEntry>,
        studentized: StudentizedSummary,
    },
}

impl RunReport {
    /// Writes the CSV (and JSON) tables of this report into `dir`; returns the file names.
    pub fn render_tables(&self, dir: &Path) -> io::Result<Vec<String>> {
        let mut files = Vec::new();
        let mut emit = |name: &str, result: io::Result<()>| -> io::Result<()> {
            result?;
            files.push(name.to_string());
            Ok(())
        };
        match self {
            Self::Simulate { cross_section } => {
                emit(FIG1, write_fig1(&dir.join(FIG1), cross_section))?;
                emit(TABLE1, write_table1(&dir.join(TABLE1), cross_section))?;
                emit(TABLE2, write_table2(&dir.join(TABLE2), cross_section))?;
                emit(FIG8, write_fig8(&dir.join(FIG8), cross_section))?;
            }
            Self::Sweep { blocksize, dimension } => {
                if let Some(b) = blocksize {
                    emit(FIG5, write_fig5(&dir.join(FIG5), b))?;
                }
                if let Some(d) = dimension {
                    emit(FIG4, write_fig4(&dir.join(FIG4), d))?;
                }
            }
            Self::Empirical {
                records,
                regressions,
                studentized,
                ..
            } => {
                emit(DIFFERENCES, write_differences(&dir.join(DIFFERENCES), records))?;
                let file = RegressionsFile {
                    assets: records.len(),
                    regressions: regressions.clone(),
                };
                emit(REGRESSIONS, write_json(&dir.join(REGRESSIONS), &file))?;
                emit(TABLE3, write_table3(&dir.join(TABLE3), studentized))?;
            }
        }
        Ok(files)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Effective configuration after CLI overrides.
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub data_file: Option<String>,
    pub data_sha256: Option<String>,
    pub report: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        let canonical = serde_json::to_vec(&config).expect("json value serializes");
        Self {
            tool: "resample-lab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_sha256: sha256_hex(&canonical),
            config,
            data_file: None,
            data_sha256: None,
            report: REPORT.into(),
            outputs: Vec::new(),
        }
    }

    pub fn with_data(mut self, name: &str, bytes: &[u8]) -> Self {
        self.data_file = Some(name.into());
        self.data_sha256 = Some(sha256_hex(bytes));
        self
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn report_path(&self, manifest_path: &Path) -> PathBuf {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(&self.report)
    }
}

/// Writes `report.json`, the tables, and `manifest.json` into `dir`.
pub fn write_run(dir: &Path, mut manifest: Manifest, report: &RunReport, csv_tables: bool) -> io::Result<Manifest> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(REPORT), report)?;
    manifest.outputs = vec![REPORT.to_string()];
    if csv_tables {
        manifest.outputs.extend(report.render_tables(dir)?);
    }
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_report(path: &Path) -> io::Result<RunReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
