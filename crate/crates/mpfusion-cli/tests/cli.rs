//! End-to-end tests of the command-line surface.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpfusion"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn run_writes_full_summary_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let res = run_bin(&[
        "run",
        "--set",
        "realizations=2",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    // default config: 4 algorithms x 50 time rows
    assert_eq!(line_count(&out.join("summary.csv")), 1 + 4 * 50);
    assert_eq!(line_count(&out.join("details.csv")), 1 + 4 * 2 * 50);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("n_total = 2000"));
    assert!(manifest.contains("n_per_filter = 400"));
    assert!(manifest.contains("master_seed = 5"));
}

#[test]
fn run_single_algorithm_single_realization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let res = run_bin(&[
        "run",
        "--set",
        "realizations=1",
        "--set",
        "algorithms=spf",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert_eq!(line_count(&out.join("details.csv")), 1 + 50);
}

#[test]
fn run_missing_config_exits_2_with_path() {
    let res = run_bin(&["run", "--config", "/no/such/config.txt", "--out", "/tmp/unused"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("/no/such/config.txt"));
}

#[test]
fn run_invalid_value_exits_2_naming_field() {
    let res = run_bin(&["run", "--set", "d_theta_g=9", "--out", "/tmp/unused"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("d_theta_g"));
}

#[test]
fn config_file_with_comments_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    fs::write(
        &cfg,
        "# small run\nd_x = 4\nK = 2\nd_theta_g = 1\nT = 6   # short horizon\nrealizations = 1\nalgorithms = spf, dapf\nparticles_per_unit = 25\n",
    )
    .unwrap();
    let out = dir.path().join("res");
    let res = run_bin(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(line_count(&out.join("details.csv")), 1 + 2 * 6);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("algorithms = spf,dapf"));
}

#[test]
fn simulate_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let res = run_bin(&["simulate", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert!(res.status.success());
    }
    let text = fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 51);
    assert_eq!(lines[0].split(',').count(), 21);
    assert!(lines[0].starts_with("t,x_0,"));
    assert!(lines[0].contains(",y_0"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(a.with_extension("csv.manifest").exists() || Path::new(&format!("{}.manifest", a.display())).exists());
}

#[test]
fn simulate_rejects_zero_length() {
    let res = run_bin(&["simulate", "--set", "T=0", "--out", "/tmp/unused.csv"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains('T'));
}

fn fuse_debug_on(text: &str) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fuse.txt");
    fs::write(&path, text).unwrap();
    run_bin(&["fuse-debug", path.to_str().unwrap()])
}

fn parsed_line(stdout: &str, key: &str) -> Vec<f64> {
    let line = stdout
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no '{key}' line in output:\n{stdout}"));
    line.split_once('=')
        .unwrap()
        .1
        .split(',')
        .map(|v| v.trim().parse().unwrap())
        .collect()
}

#[test]
fn fuse_debug_worked_example() {
    let res = fuse_debug_on("dim = 1\nprior_mean = 0\nprior_cov = 2\nlocal_mean = 1\nlocal_cov = 1\nlocal_mean = 3\nlocal_cov = 1\n");
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    let mean = parsed_line(&stdout, "fused_mean");
    let cov = parsed_line(&stdout, "fused_cov");
    assert!((mean[0] - 8.0 / 3.0).abs() < 1e-6);
    assert!((cov[0] - 2.0 / 3.0).abs() < 1e-6);
    assert!(stdout.contains("fallback = none"));
}

#[test]
fn fuse_debug_locals_equal_prior_returns_prior() {
    let res = fuse_debug_on(
        "dim = 2\nprior_mean = 1,-1\nprior_cov = 2,0.4,0.4,1\n\
         local_mean = 1,-1\nlocal_cov = 2,0.4,0.4,1\n\
         local_mean = 1,-1\nlocal_cov = 2,0.4,0.4,1\n",
    );
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    let mean = parsed_line(&stdout, "fused_mean");
    let cov = parsed_line(&stdout, "fused_cov");
    assert!((mean[0] - 1.0).abs() < 1e-9 && (mean[1] + 1.0).abs() < 1e-9);
    assert!((cov[0] - 2.0).abs() < 1e-9 && (cov[3] - 1.0).abs() < 1e-9);
}

#[test]
fn fuse_debug_indefinite_input_reports_fallback() {
    let res = fuse_debug_on(
        "dim = 1\nprior_mean = 0\nprior_cov = 1\nlocal_mean = 0\nlocal_cov = 10\nlocal_mean = 1\nlocal_cov = 10\n",
    );
    assert!(res.status.success(), "fallback paths must not fail the command");
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("fallback = product-only"));
}

#[test]
fn fuse_debug_malformed_input_exits_2() {
    let res = fuse_debug_on("dim = 2\nprior_mean = 1\n");
    assert_eq!(res.status.code(), Some(2));
}
