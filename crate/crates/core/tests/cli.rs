use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--preset",
    "desk_scale",
    "--override",
    "schedule.t_l=2",
    "--override",
    "schedule.t_m=2",
    "--override",
    "schedule.t_s=3",
    "--override",
    "sweep.pt_dbm=[10.0, 20.0, 30.0]",
];

fn trihybrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trihybrid")).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn run_into(experiment: &str, out: &Path) -> Output {
    let out = out.to_str().expect("utf-8 path");
    let mut args = vec!["run", "--experiment", experiment, "--trials", "2", "--seed", "7", "--out", out];
    args.extend_from_slice(TINY);
    trihybrid(&args)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).expect("csv opens");
    let header = r.headers().expect("header").iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.expect("row").iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let out = trihybrid(&["run", "--experiment", "no-such-thing"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_value_names_the_field() {
    let out = trihybrid(&["validate", "--override", "schedule.t_m=0"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("t_m"), "{stderr}");
}

#[test]
fn validate_echoes_derived_noise_power() {
    let out = trihybrid(&["validate"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    // -70 dBm
    assert!(stdout.contains("noise_w = 1e-10"), "{stdout}");
}

#[test]
fn power_sweep_writes_one_table_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("power-sweep", dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tables = dir.path().join("power-sweep");
    for v in ["RA-DS", "CA-DS"] {
        let (header, rows) = read_csv(&tables.join(format!("{v}.csv")));
        assert_eq!(header, ["pt_dbm", "variant", "mean_rate", "std_rate"]);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r[1] == v));
        assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() >= 0.0));
    }
}

#[test]
fn aps_demo_reports_one_peak_per_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("aps-demo", dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tables = dir.path().join("aps-demo");
    let (header, rows) = read_csv(&tables.join("aps.csv"));
    assert_eq!(header, ["bin", "angle", "rho", "rho_norm", "is_peak"]);
    assert_eq!(rows.len(), 60);
    let (header, peaks) = read_csv(&tables.join("peaks.csv"));
    assert_eq!(header, ["bin", "angle_deg", "alpha"]);
    assert!(!peaks.is_empty() && peaks.len() <= 2);
    assert!(peaks.iter().all(|p| p[1].parse::<f64>().unwrap().abs() <= 90.0));
}

#[test]
fn same_seed_reproduces_csv_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        assert!(run_into("convergence", dir).status.success());
    }
    let mut names: Vec<_> = fs::read_dir(a.path().join("convergence"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        let fa = fs::read(a.path().join("convergence").join(&n)).unwrap();
        let fb = fs::read(b.path().join("convergence").join(&n)).unwrap();
        assert_eq!(fa, fb, "{n:?} differs");
    }
}
