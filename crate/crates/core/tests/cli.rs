use std::path::Path;
use std::process::{Command, Output};

fn bmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmlab")).args(args).output().expect("spawn bmlab")
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

#[test]
fn verify_passes_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = bmlab(&[
        "verify",
        "--out",
        &out_arg(dir.path()),
        "--set",
        "gamma.max_order=6",
        "--set",
        "gamma.trials=500",
        "--set",
        "gamma.budget=400",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let assertions = report["assertions"].as_array().unwrap();
    assert!(assertions.len() >= 8);
    assert!(assertions.iter().all(|a| a["passed"] == true));
    for f in ["verify.csv", "gamma.csv", "config.ini"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn creation_with_s_unequal_beta_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bmlab(&["creation", "--out", &out_arg(dir.path()), "--set", "run.s=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.s"));
}

#[test]
fn missing_config_and_bad_override_exit_two() {
    assert_eq!(bmlab(&["gamma", "--config", "/nonexistent/cfg.ini"]).status.code(), Some(2));
    assert_eq!(bmlab(&["gamma", "--set", "noequals"]).status.code(), Some(2));
    assert_eq!(bmlab(&["gamma", "--set", "run.bogus=1"]).status.code(), Some(2));
}

#[test]
fn violated_hypothesis_exits_one() {
    // C0 = 1 is below the Maxwellian's exp(|v|²/4) moment 2^{3/2}
    let dir = tempfile::tempdir().unwrap();
    let o = bmlab(&[
        "propagation",
        "--out",
        &out_arg(dir.path()),
        "--set",
        "run.s=2",
        "--set",
        "bounds.a0=0.25",
        "--set",
        "bounds.c0=1",
        "--set",
        "run.particles=2000",
        "--set",
        "run.replicas=2",
        "--set",
        "run.t_grid=0, 0.5",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn config_file_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            "[experiment]\nout = {}\n[initial]\nkind = heavy-tail\ndelta = 0.5\n[run]\nparticles = 2000\nreplicas = 2\nt_grid = log(1e-2, 1, 3)\n",
            out.display()
        ),
    )
    .unwrap();
    let o = bmlab(&["creation", "--config", &cfg.display().to_string(), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let p = bmlab(&["plot", "--out", &out_arg(&out)]);
    assert_eq!(p.status.code(), Some(0));
    for f in ["gamma.svg", "moments.svg", "exp_moment.svg"] {
        let svg = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(svg.contains("<metadata>source: "), "{f}");
    }
    let echo = std::fs::read_to_string(out.join("config.ini")).unwrap();
    assert!(echo.contains("seed = 5"));
}
