//! End-to-end runs of the `conspinn` binary.

use std::path::Path;
use std::process::Command;

fn conspinn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_conspinn"))
        .args(args)
        .output()
        .unwrap()
}

fn tiny(out: &str) -> Vec<&str> {
    vec![
        "--pde",
        "advection1d",
        "--coarsen",
        "8",
        "--nt",
        "11",
        "--seeds",
        "0",
        "--max-epochs",
        "5",
        "--n-collocation",
        "50",
        "--output",
        out,
    ]
}

fn run(cmd: &str, extra: &[&str], out: &str) -> std::process::Output {
    let mut args = vec![cmd];
    args.extend(tiny(out));
    args.extend(extra);
    conspinn(&args)
}

#[test]
fn exit_codes() {
    assert_eq!(conspinn(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(conspinn(&["generate", "--pde", "heat"]).status.code(), Some(1));
    assert_eq!(conspinn(&["generate", "--lambda=-1"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("none");
    let o = conspinn(&["evaluate", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generate"));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(run("generate", &["--csv"], out).status.success());
    for f in [
        "dataset.bin",
        "dataset.csv",
        "series_L.json",
        "series_Q.json",
        "manifest-generate.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let o = run(
        "train",
        &["--variants", "pinn,pinn-proj", "--quantities", "L,both"],
        out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("runs/pinn-proj-LQ/seed-0/params.bin").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest-train.json")).unwrap()).unwrap();
    let overrides = manifest["overrides"].as_array().unwrap();
    assert!(overrides.iter().any(|v| v == "training.max_epochs"));
    assert_eq!(manifest["summary"]["models"].as_array().unwrap().len(), 3);

    let o = run(
        "evaluate",
        &["--variants", "pinn,pinn-proj", "--quantities", "L,both"],
        out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("spectra").exists());
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), conspinn::evaluation::RESULTS_HEADER);
    assert_eq!(lines.count(), 3);
    let traj = std::fs::read_to_string(dir.path().join("trajectories/c_L.csv")).unwrap();
    let header: Vec<&str> = traj.lines().nth(1).unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "pinn-proj-L").unwrap();
    let values: Vec<f64> = traj
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    assert!(
        values.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12),
        "projected trajectory is flat"
    );
}

#[test]
fn config_file_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
pde = "wave"
variants = ["pinn"]
quantities = ["L"]
seeds = [3]
[grid]
coarsen = 8
nt = 11
[training]
n_collocation = 40
max_epochs = 3
[spectra]
probes = 2
steps = 5
"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let args = |cmd: &'static str| {
        vec![
            cmd.to_string(),
            "--config".into(),
            cfg.display().to_string(),
            "--output".into(),
            out.display().to_string(),
        ]
    };
    for cmd in ["generate", "train"] {
        let a = args(cmd);
        let o = conspinn(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mut a = args("evaluate");
    a.push("--spectra".into());
    assert!(conspinn(&a.iter().map(String::as_str).collect::<Vec<_>>())
        .status
        .success());
    assert!(Path::new(&out).join("runs/pinn/seed-3/record.json").exists());
    let csv = std::fs::read_to_string(out.join("spectra/pinn.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("eigenvalue,density"));
    assert!(out.join("spectra/summary.json").exists());
}
