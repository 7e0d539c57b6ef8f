use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn catenet(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("job.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_catenet"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

fn check<'a>(r: &'a Value, name: &str) -> &'a Value {
    r["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap_or_else(|| panic!("no check {name}"))
}

const CATENOID: &str = r#"
[network]
kind = "catenoid"
eta = 1.0

[checks]
topology = true
total_curvature = true
decay = true
flux = true
spectrum = true
"#;

#[test]
fn catenoid_solve_reports_total_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let o = catenet(&["solve"], CATENOID, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(dir.path());
    let k = r["total_curvature"]["integrated"].as_f64().unwrap();
    assert!((k / (-4.0 * PI) - 1.0).abs() < 0.05, "{k}");
    assert_eq!(r["mesh"]["genus"], 0);
    assert_eq!(r["mesh"]["ends"], 2);
    assert_eq!(check(&r, "flux")["passed"], true);
    assert_eq!(check(&r, "spectrum")["passed"], true);
    for f in ["mesh.obj", "solved.obj", "fields.csv", "flux.csv", "contraction.csv", "timings.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let obj = std::fs::read_to_string(dir.path().join("out/mesh.obj")).unwrap();
    let v = obj.lines().filter(|l| l.starts_with("v ")).count();
    assert_eq!(v as u64, r["mesh"]["vertices"].as_u64().unwrap());
}

#[test]
fn ring_topology() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[network]\nkind = \"symmetric_ring\"\nj = 6\nseparation = 6.0\n\n[checks]\ntopology = true\n";
    let o = catenet(&["build"], cfg, dir.path());
    assert!(o.status.success());
    let r = report(dir.path());
    assert_eq!((r["mesh"]["genus"].as_i64(), r["mesh"]["ends"].as_u64()), (Some(1), Some(6)));
    assert_eq!(r["mesh"]["euler_characteristic"], -6);
}

#[test]
fn close_necks_and_wide_catenoids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = catenet(&["validate"], "[network]\nkind = \"symmetric_ring\"\nj = 6\neta = 0.8\n", dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(check(&report(dir.path()), "network")["detail"].as_str().unwrap().contains("too close"));
    let o = catenet(&["solve"], "[network]\nkind = \"catenoid\"\neta = 2.0\n", dir.path());
    assert_ne!(o.status.code(), Some(0));
    assert!(report(dir.path())["network"]["rejection"].is_object());
}

#[test]
fn config_errors_cite_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = catenet(&["build"], "[network]\nkind = \"catenoid\"\neta = 1.0\n\n[solve]\nkapa = -0.5\n", dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("kapa") && err.contains("line 6"), "{err}");
}

#[test]
fn stage_errors_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = catenet(&["flux"], "[network]\nkind = \"symmetric_ring\"\nj = 6\nseparation = 6.0\n", dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage flux"));
}

#[test]
fn reports_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(catenet(&["solve"], CATENOID, a.path()).status.success());
    assert!(catenet(&["solve", "--workers", "2"], CATENOID, b.path()).status.success());
    let ra = std::fs::read(a.path().join("out/report.json")).unwrap();
    let rb = std::fs::read(b.path().join("out/report.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn j_sweep_increases_spacing_and_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[network]\nkind = \"symmetric_ring\"\nj = 6\neta = 0.05\n\n[sweep]\nparameter = \"j\"\nvalues = [6, 8, 10]\nsolve = false\n";
    let o = catenet(&["sweep"], cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(dir.path());
    let d: Vec<f64> = r["sweep"]["rows"].as_array().unwrap().iter().map(|x| x["d"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[1] > w[0]), "{d:?}");
    assert!(std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap().lines().count() == 4);

    let cfg = "[network]\nkind = \"catenoid\"\neta = 1.0\n\n[sweep]\nparameter = \"eta\"\nvalues = [1.0, 3.0]\nsolve = false\n";
    let o = catenet(&["sweep"], cfg, dir.path());
    assert_eq!(o.status.code(), Some(1));
    let rows = report(dir.path())["sweep"]["rows"].clone();
    assert_eq!(rows[0]["passed"], true);
    assert!(rows[1]["error"].as_str().unwrap().contains("separation"));
}

#[test]
fn report_verb_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    assert!(catenet(&["validate"], CATENOID, dir.path()).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_catenet")).args(["report", "--out"]).arg(dir.path().join("out")).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("[pass] network"));
}

#[test]
fn shipped_jobs_validate() {
    let jobs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../jobs");
    for e in std::fs::read_dir(jobs).unwrap() {
        let path = e.unwrap().path();
        let dir = tempfile::tempdir().unwrap();
        let o = catenet(&["validate"], &std::fs::read_to_string(&path).unwrap(), dir.path());
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stdout));
    }
}
