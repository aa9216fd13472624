use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_crystal-surface");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("CRYSTAL_SURFACE_OUT")
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--set",
    "nx=32",
    "--set",
    "nt=3",
    "--set",
    "T=1e-3",
    "--set",
    "epsilon=0.3",
    "--set",
    "pdhg.lambda=1.0",
    "--set",
    "pdhg.sigma=0.1",
];

fn evolve_small(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["evolve", "--out", out];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args, dir)
}

#[test]
fn evolve_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = evolve_small(tmp.path(), "run", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("run");
    let diag = fs::read_to_string(dir.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 4);
    let snaps = fs::read_to_string(dir.join("snapshots.csv")).unwrap();
    assert_eq!(snaps.lines().next(), Some("t,x,h"));
    assert_eq!(snaps.lines().count(), 1 + 4 * 32);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_status"], 0);
    assert_eq!(manifest["config"]["nx"], 32);
    assert!(!dir.join(".lock").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(evolve_small(tmp.path(), "a", &[]).status.code(), Some(0));
    assert_eq!(evolve_small(tmp.path(), "b", &[]).status.code(), Some(0));
    for f in ["snapshots.csv", "diagnostics.csv"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn snapshot_stride_limits_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = evolve_small(tmp.path(), "s", &["--set", "nt=5", "--set", "output.snapshot_stride=2"]);
    assert_eq!(out.status.code(), Some(0));
    let snaps = fs::read_to_string(tmp.path().join("s/snapshots.csv")).unwrap();
    // Steps 0, 2, 4 and the final step 5.
    assert_eq!(snaps.lines().count(), 1 + 4 * 32);
}

#[test]
fn verbose_prints_one_line_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    let out = evolve_small(tmp.path(), "v", &["--verbose"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().filter(|l| l.starts_with("step ")).count(), 4);
}

#[test]
fn config_error_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "nx = 32\n[pdhg]\nlambda = -1\n").unwrap();
    let out = run(
        &["evolve", "--config", cfg.to_str().unwrap(), "--out", "never"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pdhg.lambda"));
    assert!(!tmp.path().join("never").exists());

    fs::write(&cfg, "nx = 32\nlamda = 3\n").unwrap();
    let out = run(
        &["evolve", "--config", cfg.to_str().unwrap(), "--out", "never"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!tmp.path().join("never").exists());
}

#[test]
fn config_file_is_read() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "nx = 16\nnt = 2\nT = 1e-3\nepsilon = 0.5\n[pdhg]\nlambda = 1.0\nsigma = 0.1\n[initial]\nkind = \"zero\"\n[output]\ndir = \"from-config\"\n",
    )
    .unwrap();
    let out = run(&["evolve", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let snaps = fs::read_to_string(tmp.path().join("from-config/snapshots.csv")).unwrap();
    assert_eq!(snaps.lines().count(), 1 + 3 * 16);
    assert!(snaps.lines().skip(1).all(|l| l.ends_with(",0.0000000000000000e0")));
}

#[test]
fn environment_sets_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["evolve"];
    args.extend_from_slice(SMALL);
    let out = Command::new(BIN)
        .args(&args)
        .current_dir(tmp.path())
        .env("CRYSTAL_SURFACE_OUT", "env-out")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("env-out/diagnostics.csv").exists());
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("busy")).unwrap();
    fs::write(tmp.path().join("busy/.lock"), "").unwrap();
    let out = evolve_small(tmp.path(), "busy", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("busy/diagnostics.csv").exists());
}

#[test]
fn nonconvergence_exits_1_with_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = evolve_small(tmp.path(), "nc", &["--set", "pdhg.max_iter=2"]);
    assert_eq!(out.status.code(), Some(1));
    let diag = fs::read_to_string(tmp.path().join("nc/diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 2);
    assert!(diag.lines().nth(2).unwrap().contains(",false,"));
    let manifest = fs::read_to_string(tmp.path().join("nc/manifest.json")).unwrap();
    assert!(manifest.contains("\"exit_status\": 1"));
}

#[test]
fn validate_reports_the_step_condition() {
    let tmp = tempfile::tempdir().unwrap();
    // At the default settings (τ/λ)‖A DᵗD‖ is far above 1.
    let out = run(&["validate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("estimate"), "{stdout}");
    assert!(stdout.contains("violated"));

    let out = run(
        &[
            "validate",
            "--set",
            "T=1e-12",
            "--set",
            "mobility.variant=smoothed-sign",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn penalty_compare_writes_study() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "penalty-compare",
            "--out",
            "p",
            "--set",
            "studies.penalty_nx=[8, 16]",
            "--set",
            "studies.epsilon=0.5",
            "--set",
            "studies.l2_lambda=0.05",
            "--set",
            "studies.l2_sigma=0.05",
            "--set",
            "pdhg.lambda=1.0",
            "--set",
            "pdhg.sigma=0.1",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("p/study.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,variant");
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1..].iter().any(|l| l.ends_with(",l2")));
    assert!(lines[1..].iter().any(|l| l.ends_with(",h1-dot")));
}

#[test]
fn refinement_commands_write_studies() {
    let tmp = tempfile::tempdir().unwrap();
    let common = [
        "--set",
        "studies.epsilon=0.5",
        "--set",
        "studies.T=1e-3",
        "--set",
        "pdhg.lambda=1.0",
        "--set",
        "pdhg.sigma=0.1",
    ];
    let mut args = vec![
        "space-refine",
        "--out",
        "s",
        "--set",
        "studies.space_nx=[8, 16, 32]",
        "--set",
        "studies.space_nt=2",
    ];
    args.extend_from_slice(&common);
    assert_eq!(run(&args, tmp.path()).status.code(), Some(0));
    let mut args = vec![
        "time-refine",
        "--out",
        "t",
        "--set",
        "studies.time_nx=16",
        "--set",
        "studies.time_nt=[1, 2, 4]",
    ];
    args.extend_from_slice(&common);
    let out = run(&args, tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("slope"));
    for f in ["s/study.csv", "t/study.csv"] {
        let csv = fs::read_to_string(tmp.path().join(f)).unwrap();
        // Absolute and relative error per parameter.
        assert_eq!(csv.lines().count(), 1 + 3 * 2, "{f}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["nonsense"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["evolve", "--set", "nx"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["--help"], tmp.path()).status.code(), Some(0));
}
