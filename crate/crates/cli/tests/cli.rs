use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use resample_lab::dgp::{simulate_path, AssetSpec, ObservableMoments};
use resample_lab::empirical::ReturnTable;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resample-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{"universe": {"recipe": {"count": 6}}, "paths": 30, "sweeps": {"dimension": [1, 2, 4], "paths": 20}}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn returns_csv(dir: &Path) -> String {
    let specs: Vec<AssetSpec> = (0..4)
        .map(|m| {
            let obs = ObservableMoments::new(0.004 + 0.001 * m as f64, 0.002, 0.05 * m as f64, 0.3).unwrap();
            AssetSpec::new(format!("f{m}"), obs).unwrap()
        })
        .collect();
    let path = simulate_path(&specs, 180, 9).unwrap();
    let dates = (0..180).map(|t| format!("{}-{:02}", 1990 + t / 12, t % 12 + 1)).collect();
    let ids = specs.iter().map(|s| s.id.clone()).collect();
    let table = ReturnTable::new(dates, ids, path.as_slice().to_vec()).unwrap();
    let file = dir.join("returns.csv");
    table.write_csv(fs::File::create(&file).unwrap()).unwrap();
    file.to_string_lossy().into_owned()
}

#[test]
fn bounds_from_parameters() {
    let o = run(&["bounds", "--theta", "0.2", "--psi", "0.1", "--gamma", "100", "--n", "60"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    let num = |i: usize| cells[i].parse::<f64>().unwrap();
    assert!((num(6) - 1e-3).abs() < 1e-12);
    assert!((num(7) - 1.22e-5).abs() < 1e-15);
    assert!((num(8) + 0.195).abs() < 1e-9);
    assert!((num(9) + 0.1478328).abs() < 1e-6);
}

#[test]
fn bounds_json_and_negative_theta() {
    let o = run(&["bounds", "--theta", "-0.2", "--psi", "0.1", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v[0]["bounds"]["sr_numerical"].as_f64().unwrap() > 0.0);
}

#[test]
fn bounds_from_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = returns_csv(dir.path());
    let o = run(&["bounds", "--data", &csv, "--n", "24"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 5);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["bounds", "--theta", "0.2"]).status.code(), Some(2));
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"paths": 1}"#).unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, "{not json").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_cell_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("gap.csv");
    fs::write(&csv, "date,a,b\n2000-01,0.01,0.02\n2000-02,0.02,\n2000-03,0.0,0.01\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["empirical", "--data", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(msg.contains("row 2") && msg.contains("'b'"), "{msg}");
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .args(["simulate", "--config", &cfg, "--out", b.to_str().unwrap()])
        .env("RESAMPLE_LAB_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let files = dir_bytes(&a);
    assert_eq!(files, dir_bytes(&b));
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    for expected in ["fig1_ratios.csv", "table1_r2.csv", "table2_percentiles.csv", "fig8_coupling.csv", "manifest.json"] {
        assert!(names.contains(&expected), "{names:?}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let o = run(&["simulate", "--config", &cfg, "--seed", "7", "--noise", "constant", "--format", "json", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["master_seed"], 7);
    assert_eq!(manifest["config"]["noise"], "constant");
    assert!(!a.join("fig1_ratios.csv").exists());
}

#[test]
fn sweeps_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let bs = dir.path().join("bs");
    let dim = dir.path().join("dim");
    let o = run(&["sweep", "--kind", "blocksize", "--config", &cfg, "--out", bs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(bs.join("fig5_blocksize.csv").exists());
    let o = run(&["sweep", "--kind", "dimension", "--config", &cfg, "--out", dim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dim.join("fig4_dimension.csv").exists());

    let again = dir.path().join("again");
    let o = run(&["report", "--manifest", dim.join("manifest.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(dim.join("fig4_dimension.csv")).unwrap(), fs::read(again.join("fig4_dimension.csv")).unwrap());
}

#[test]
fn empirical_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = returns_csv(dir.path());
    let cfg = dir.path().join("emp.json");
    fs::write(&cfg, r#"{"backtest": {"window": 24}, "bootstrap": {"replications": 199, "mean_block": 6, "shuffles": 1}}"#).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["empirical", "--config", cfg.to_str().unwrap(), "--data", &csv, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    for f in ["differences.csv", "regressions.json", "table3_studentized.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["data_file"], "returns.csv");
    assert_eq!(manifest["data_sha256"].as_str().unwrap().len(), 64);
    let diffs = fs::read_to_string(a.join("differences.csv")).unwrap();
    assert_eq!(diffs.lines().count(), 5);
}

#[test]
fn help_lists_flags() {
    for (sub, flags) in [
        ("simulate", &["--config", "--out", "--seed", "--format", "--paths", "--noise"][..]),
        ("bounds", &["--theta", "--psi", "--gamma", "--n", "--data", "--format"][..]),
        ("sweep", &["--kind", "--config", "--out", "--seed", "--format"][..]),
        ("empirical", &["--config", "--data", "--out", "--seed", "--format"][..]),
        ("report", &["--manifest", "--out", "--format"][..]),
    ] {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success());
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{sub} help lacks {f}");
        }
    }
}
