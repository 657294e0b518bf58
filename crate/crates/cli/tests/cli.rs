use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sslab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sslab"))
        .arg("--out")
        .arg(root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("manifest on stdout")
}

fn run_dir(m: &Value) -> PathBuf {
    PathBuf::from(m["run_dir"].as_str().unwrap())
}

fn entries(root: &Path) -> usize {
    fs::read_dir(root).map(|d| d.count()).unwrap_or(0)
}

const CONTROL: &str = r#"
p = 5.0
frame = "lab"

[grid]
nodes = 300
r_max = 30.0
sponge_strength = 0.0

[time]
dt_max = 0.01

[initial]
shape = { kind = "gaussian", amplitude = 0.5, width = 1.0 }

[stop]
t_max = 0.1

[diagnostics]
every = 0.05
"#;

#[test]
fn unknown_flag_is_a_usage_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sslab(tmp.path(), &["bstar", "--p", "5.05", "--bogus"]);
    assert_eq!(out.status.code(), Some(64));
    assert_eq!(entries(tmp.path()), 0);
    let out = sslab(tmp.path(), &["nonsense"]);
    assert_eq!(out.status.code(), Some(64));
    assert_eq!(entries(tmp.path()), 0);
}

#[test]
fn bstar_matches_arithmetic_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sslab(tmp.path(), &["bstar", "--p", "3.02", "--N", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(&out);
    let rep: Value = serde_json::from_slice(&fs::read(run_dir(&m).join("bstar.json")).unwrap()).unwrap();
    // σ_c = 2·0.02/(2·2.02) = 1/101, b* = π/ln 101
    assert!((rep["sigma_c"].as_f64().unwrap() - 1.0 / 101.0).abs() < 1e-15);
    assert_eq!(rep["bstar_10"], "0.6807173598");
}

#[test]
fn subcritical_bstar_is_a_domain_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sslab(tmp.path(), &["bstar", "--p", "1.81", "--N", "2"]);
    assert_eq!(out.status.code(), Some(65));
    let rep: Value = serde_json::from_slice(&fs::read(run_dir(&manifest(&out)).join("bstar.json")).unwrap()).unwrap();
    assert!(rep["bstar"].is_null());
    assert!(rep["sigma_c"].as_f64().unwrap() < 0.0);
}

#[test]
fn spectral_1d_reports_positive_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sslab(tmp.path(), &["spectral", "--N", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let rep: Value = serde_json::from_slice(&fs::read(run_dir(&manifest(&out)).join("spectral.json")).unwrap()).unwrap();
    assert!(rep["delta1"].as_f64().unwrap() > 0.0);
    let off = sslab(tmp.path(), &["spectral", "--N", "1", "--p", "3"]);
    assert_eq!(off.status.code(), Some(64));
}

#[test]
fn identical_inputs_give_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let a = manifest(&sslab(tmp.path(), &["groundstate", "--p", "3", "--N", "2"]));
    let b = manifest(&sslab(tmp.path(), &["groundstate", "--p", "3", "--N", "2"]));
    assert_ne!(run_dir(&a), run_dir(&b));
    assert_eq!(a["config_hash"], b["config_hash"]);
    let fa = fs::read(run_dir(&a).join("groundstate.csv")).unwrap();
    let fb = fs::read(run_dir(&b).join("groundstate.csv")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn manifest_lists_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sslab(tmp.path(), &["reduced", "--sigma-c", "0.005", "--b0", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(&out);
    let dir = run_dir(&m);
    let mut listed: Vec<String> = m["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap().to_string()).collect();
    listed.push("manifest.json".into());
    listed.sort();
    let mut on_disk: Vec<String> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    for f in m["files"].as_array().unwrap() {
        let len = fs::metadata(dir.join(f["name"].as_str().unwrap())).unwrap().len();
        assert_eq!(f["bytes"].as_u64().unwrap(), len);
    }
}

#[test]
fn bad_config_is_rejected_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "sigma = 0.005\n[grid]\nnodez = 100\n").unwrap();
    let root = tmp.path().join("runs");
    let out = sslab(&root, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodez"));
    assert_eq!(entries(&root), 0);
}

#[test]
fn simulate_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("control.toml");
    fs::write(&cfg, CONTROL).unwrap();
    let root = tmp.path().join("runs");
    let a = sslab(&root, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = sslab(&root, &["simulate", "--config", cfg.to_str().unwrap()]);
    let (da, db) = (run_dir(&manifest(&a)), run_dir(&manifest(&b)));
    for name in ["trace.csv", "config.toml", "report.json"] {
        assert_eq!(fs::read(da.join(name)).unwrap(), fs::read(db.join(name)).unwrap(), "{name}");
    }
    let rep: Value = serde_json::from_slice(&fs::read(da.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["outcome"], "time_limit");
    // a non-collapsing run fails the collapse checks
    let r = sslab(&root, &["report", "--run", da.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let checks: Value = serde_json::from_slice(&fs::read(run_dir(&manifest(&r)).join("checks.json")).unwrap()).unwrap();
    assert_eq!(checks["all_pass"], false);
    assert!(String::from_utf8_lossy(&r.stderr).contains("FAIL"));
}
