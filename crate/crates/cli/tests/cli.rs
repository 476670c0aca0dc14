use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bearing-align"))
}

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["validate", "--scenario", path(&bundled())])), 0);
    assert_eq!(code(&run(&["validate"])), 0);

    let text = fs::read_to_string(bundled()).unwrap();
    let coplanar = dir.path().join("coplanar.json");
    fs::write(&coplanar, text.replace("[2.5, 1.0, 1.2]", "[2.5, 1.0, 1.0]")).unwrap();
    let o = run(&["validate", "--scenario", path(&coplanar)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("coplanar"), "{}", stderr(&o));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"agents\": [").unwrap();
    let o = run(&["validate", "--scenario", path(&broken)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));

    assert_eq!(code(&run(&["validate", "--scenario", path(&dir.path().join("missing.json"))])), 3);
}

#[test]
fn usage_errors_exit_four() {
    assert_eq!(code(&run(&["frobnicate"])), 4);
    assert_eq!(code(&run(&["run", "--landmark-mode", "several"])), 4);
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["equilibria", "--agent", "1", "--out", path(dir.path())]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("agent 1"));
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn bad_override_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "--dt", "-0.1", "--out", path(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dt"));
}

#[test]
fn run_writes_identical_outputs_twice() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&["run", "--scenario", path(&bundled()), "--out", path(d.path())]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("all agents converged"));
        assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("agent ")).count(), 8);
    }
    for f in ["trajectory.csv", "convergence.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let csv = fs::read_to_string(a.path().join("trajectory.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 8 * 16);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("convergence.json")).unwrap()).unwrap();
    assert_eq!(report["all_converged"], true);
    assert_eq!(report["agents"].as_array().unwrap().len(), 8);
}

#[test]
fn zero_duration_run_is_header_only() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run", "--t-end", "0", "--out", path(d.path())]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("not converged"));
    assert_eq!(fs::read_to_string(d.path().join("trajectory.csv")).unwrap().lines().count(), 1);
}

#[test]
fn fallback_landmark_modes_converge() {
    for mode in ["single", "none"] {
        let d = tempfile::tempdir().unwrap();
        let o = run(&["run", "--landmark-mode", mode, "--out", path(d.path())]);
        assert_eq!(code(&o), 0, "{mode}: {}", stderr(&o));
        assert!(stdout(&o).contains("all agents converged"), "{mode}");
    }
}

#[test]
fn sweep_writes_both_tables() {
    let d = tempfile::tempdir().unwrap();
    let args = ["sweep", "--trials", "1", "--t-end", "5", "--dt", "0.01", "--seed", "3", "--out", path(d.path())];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("monte_carlo.json")).unwrap()).unwrap();
    assert_eq!(mc["trials"], 1);
    assert_eq!(mc["results"].as_array().unwrap().len(), 1);
    let iss: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("iss_table.json")).unwrap()).unwrap();
    assert_eq!(iss["rows"].as_array().unwrap().len(), 6);
    let first = fs::read(d.path().join("monte_carlo.json")).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(first, fs::read(d.path().join("monte_carlo.json")).unwrap());
}
