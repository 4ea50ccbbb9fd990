use std::path::Path;
use std::process::{Command, Output};

fn srl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SRL_WORKERS")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["derive", "steady", "spectrum"] {
        let (a, b) = (tmp.path().join(format!("{cmd}_a")), tmp.path().join(format!("{cmd}_b")));
        assert!(srl(&[cmd, "-p", "fig2"], &a).status.success());
        assert!(srl(&[cmd, "-p", "fig2"], &b).status.success());
        let (fa, fb) = (files(&a), files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{cmd}");
        for (name, _) in &fa {
            assert!(srl::output::verify(&a.join(name)).unwrap(), "{cmd}/{name}");
        }
    }
}

#[test]
fn derive_reports_the_fig2_linewidth() {
    let tmp = tempfile::tempdir().unwrap();
    let o = srl(&["derive", "-p", "fig2"], tmp.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("derive.json")).unwrap()).unwrap();
    let lw = v["data"]["linewidths"]["cooperativity_hz"].as_f64().unwrap();
    assert!((lw - 6.2389e-3).abs() < 1e-6, "{lw}");
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["steady", "-p", "fig2", "--set", "params.bogus=1"],
        &["derive", "-p", "lossless"],
        &["sweep", "-p", "fig2", "--set", "sweep.n_axis.count=0"],
        &["steady", "-p", "fig2", "--set", "params.gamma=-1"],
    ];
    for args in cases {
        let o = srl(args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn missing_params_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, "").unwrap();
    let o = srl(&["steady", "--config", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn over_budget_grid_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let o = srl(&["sweep", "-p", "fig2", "--set", "sweep.cell_budget=100"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn numerical_failure_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = srl(
        &["dynamics", "-p", "pr_yso_fig_s3", "--set", "dynamics.max_steps=100"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = srl(&["sweep", "-p", "fig2", "--dry-run"], &out);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("3600 cells"), "{text}");
    assert!(!out.exists());
}

#[test]
fn checkpoint_resume_reproduces_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("ck.jsonl");
    let args = [
        "sweep",
        "-p",
        "fig2",
        "--set",
        "sweep.n_axis.count=4",
        "--set",
        "sweep.eta_axis_hz.count=4",
        "--checkpoint",
        ck.to_str().unwrap(),
    ];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(srl(&args, &a).status.success());
    let o = srl(&args, &b);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("16 resumed"));
    assert_eq!(files(&a), files(&b));
}

#[test]
fn worker_count_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_srl"))
        .args(["sweep", "-p", "fig2", "--dry-run", "--out"])
        .arg(tmp.path())
        .env("SRL_WORKERS", "3")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).contains("3 workers"));
}

#[test]
fn angular_override_replaces_the_hz_value() {
    let tmp = tempfile::tempdir().unwrap();
    let o = srl(&["steady", "-p", "fig2", "--set", "params.gamma_angular=1.0", "--dry-run"], tmp.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("gamma_angular = 1.0"));
    assert!(!text.contains("gamma = 100000.0"));
}
