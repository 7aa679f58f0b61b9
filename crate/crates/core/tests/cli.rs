use std::path::Path;
use std::process::{Command, Output};

use splitree::harness::reports_from_csv;

fn splitree(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitree"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["--b", "abc", "scale"],
        &["--b", "-1", "scale"],
        &["moments", "--order", "3"],
        &["--reps", "50", "validate", "--checks", "geometric"],
        &["validate", "--checks", "nonsense"],
    ] {
        assert_eq!(splitree(args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(splitree(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn failed_validation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitree(&["--cap", "3", "--reps", "2000", "validate", "--checks", "forward"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let rows = reports_from_csv(&std::fs::read_to_string(dir.path().join("validation.csv")).unwrap()).unwrap();
    assert!(rows.iter().any(|r| !r.passed()));
}

#[test]
fn passing_validation_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitree(&["--reps", "5000", "validate", "--checks", "geometric,clonal,means"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("validation.csv")).unwrap();
    let rows = reports_from_csv(&text).unwrap();
    assert!(!rows.is_empty() && rows.iter().all(|r| r.passed()));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nreps = 7\nseed = 3\nt = 1.5\nkmax = 2\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let from_file = dir.path().join("a");
    assert!(splitree(&["--config", cfg, "simulate"], &from_file).status.success());
    let rows = lines(&from_file.join("simulate.csv"));
    assert_eq!(rows[0], "t,replica,n,z0,a1,a2");
    assert_eq!(rows.len(), 1 + 7);
    assert!(rows[1].starts_with("1.5,0,"));

    let overridden = dir.path().join("b");
    assert!(splitree(&["--config", cfg, "--reps", "4", "--t", "1", "simulate"], &overridden).status.success());
    let rows = lines(&overridden.join("simulate.csv"));
    assert_eq!(rows.len(), 1 + 4);
    assert!(rows[1].starts_with("1,0,"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert!(splitree(&["--reps", "200", "--seed", seed, "simulate"], &out).status.success());
        std::fs::read(out.join("simulate.csv")).unwrap()
    };
    assert_eq!(run("a", "11"), run("b", "11"));
    assert_ne!(run("a", "11"), run("c", "12"));
}

#[test]
fn every_subcommand_writes_its_csv() {
    let dir = tempfile::tempdir().unwrap();
    for (args, file) in [
        (&["scale"][..], "scale.csv"),
        (&["--reps", "20", "simulate"], "simulate.csv"),
        (&["--reps", "20", "forward"], "forward.csv"),
        (&["moments"], "moments.csv"),
        (&["--kmax", "2", "moments", "--order", "2"], "moments.csv"),
        (&["limits"], "limits.csv"),
        (&["--reps", "500", "converge", "--ladder", "1,2"], "convergence.csv"),
    ] {
        let out = dir.path().join(file.trim_end_matches(".csv")).join(args.len().to_string());
        let res = splitree(args, &out);
        assert!(res.status.success(), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(lines(&out.join(file)).len() > 1, "{args:?}");
    }
}

#[test]
fn scale_table_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    assert!(splitree(&["--horizon", "3", "scale"], dir.path()).status.success());
    let rows = lines(&dir.path().join("scale.csv"));
    assert_eq!(rows[0], "t,w,w_theta,survival");
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] / (2.0 * v[0].exp() - 1.0) - 1.0).abs() < 1e-5);
        assert!((v[2] / (4.0 * (0.5 * v[0]).exp() - 3.0) - 1.0).abs() < 1e-5);
    }
}
