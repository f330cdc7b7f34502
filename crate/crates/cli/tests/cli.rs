use std::fs;
use std::process::{Command, Output};

fn eukf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eukf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn header(path: &std::path::Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn run_writes_requested_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = eukf(&[
        "run", "--model", "vdp", "--steps", "20", "--seed", "4", "--ensemble", "200",
        "--filters", "ukf,enkf,eukfa", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        header(&out),
        "k,trP_enkf,relerr_enkf,z_enkf,enorm_enkf,trP_ukf,relerr_ukf,z_ukf,enorm_ukf,trP_eukfa,relerr_eukfa,z_eukfa,enorm_eukfa"
    );
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 21);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "model = \"linear-ex2\"\nsteps = 50\nfilters = [\"kf\", \"ukf\"]\n").unwrap();
    let out = dir.path().join("r.csv");
    let o = eukf(&["run", "--config", cfg.to_str().unwrap(), "--steps", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(header(&out).starts_with("k,trP_kf,"));
}

#[test]
fn divergence_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "model = \"custom\"\nsteps = 3\nfilters = [\"eukfa\", \"eukfc\"]\na = [[1.0, 0.0], [0.0, 0.0]]\nc = [[1.0, 1.0]]\n").unwrap();
    let out = dir.path().join("r.csv");
    let o = eukf(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eukfa diverged"));
    // the surviving filter's results are still written
    assert!(out.exists());
}

#[test]
fn bad_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let out = out.to_str().unwrap();
    assert!(!eukf(&["run", "--model", "lorenz", "--filters", "kf", "--out", out]).status.success());
    assert!(!eukf(&["run", "--model", "nope", "--out", out]).status.success());
    assert!(!eukf(&["run", "--filters", "ukf,xkf", "--out", out]).status.success());
    assert!(!eukf(&["reproduce", "--example", "5", "--out", out]).status.success());
}

#[test]
fn verify_reports_all_checks() {
    let o = eukf(&["verify", "--trials", "5", "--seed", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("PASS").count(), 8, "{text}");
}

#[test]
fn reproduce_example1_prints_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = eukf(&["reproduce", "--example", "1", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("9.0976") && text.contains("9.7302"), "{text}");
    assert!(dir.path().join("results.csv").exists());
    assert!(dir.path().join("trace.gp").exists());
}

#[test]
fn reproduce_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = |name: &str| {
        let d = dir.path().join(name);
        let o = eukf(&[
            "reproduce", "--example", "4", "--steps", "50", "--ensemble", "2000", "--seed", "3",
            "--out", d.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        fs::read(d.join("results.csv")).unwrap()
    };
    assert_eq!(csv("a"), csv("b"));
}
