use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_knotgauge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_circle(dir: &Path, n: usize) -> PathBuf {
    let samples: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            [t.cos(), t.sin(), 0.0]
        })
        .collect();
    let path = dir.join("circle.json");
    fs::write(&path, serde_json::json!({ "closed": true, "samples": samples }).to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn certify_same_curve_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_circle(dir.path(), 128);
    let o = run(&["certify", s(&c), s(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pass"], serde_json::Value::Bool(true));
}

#[test]
fn analyze_circle_reports_right_angle() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_circle(dir.path(), 256);
    let out = dir.path().join("report.json");
    let profile = dir.path().join("profile.csv");
    let o = run(&["--seed", "7", "analyze", s(&c), "--profile", s(&profile), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let delta = v["result"]["delta_global"].as_f64().unwrap();
    assert!((delta - PI / 2.0).abs() < 1e-3, "delta = {delta}");
    assert_eq!(v["seed"], 7);
    assert_eq!(v["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(fs::read_to_string(&profile).unwrap().starts_with("r,delta,i,j\n"));
}

#[test]
fn minimize_zero_steps_echoes_energy() {
    let o = run(&["minimize", "--torus", "2,3", "--p", "3", "--steps", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("initial energy = ")).expect("energy line");
    let e: f64 = line["initial energy = ".len()..].trim().parse().unwrap();
    assert!(e.is_finite() && e > 4.0);
    assert!(stderr(&o).contains("rounded up to 258"));
}

#[test]
fn trefoil_against_circle_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_circle(dir.path(), 258);
    let t = dir.path().join("trefoil.csv");
    let o = run(&["minimize", "--torus", "2,3", "--p", "3", "--steps", "0", "--out", s(&t)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["certify", s(&c), s(&t)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_one() {
    let o = run(&["analyze", "x.json", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,y,z\n1,2,3\n1,b,3\n").unwrap();
    let o = run(&["analyze", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn flow_trace_has_header_and_moves_outward() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_circle(dir.path(), 256);
    let trace = dir.path().join("trace.csv");
    let o = run(&[
        "flow", s(&c), "--seed", "1.2,0,0.05", "--dir", "inc", "--rM", "0.8", "--rho", "0.1", "--steps", "64", "--trace",
        s(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x,y,z,dist"));
    let dists: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(dists.len(), 65);
    assert!(dists.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn decreasing_flow_requires_delta() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_circle(dir.path(), 128);
    let o = run(&["flow", s(&c), "--seed", "-0.8,0,0", "--dir", "dec", "--rM", "0.8", "--rho", "0.1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--delta"));
}
