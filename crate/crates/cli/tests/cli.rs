use std::path::{Path, PathBuf};
use std::process::Command;

use phasefield_cli::{compare, run, CliError, ExperimentConfig, ExperimentId, FieldSets};

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(format!("{name}.toml"))
}

fn pfonet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pfonet"))
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

const SMALL: &str = r#"
version = 1
experiment = "oracle-run"
output = "small"
tau = 0.001
steps = 5

[energy]
kind = "quadratic"
k = 10.0

[metric]
kind = "l2"
weight_m = 1.0

[grid]
kind = "1d"
n = 21
a = -1.0
b = 1.0

[initial]
kind = "sine"
"#;

#[test]
fn every_preset_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg =
                ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            // The resolved snapshot parses back to the same config.
            assert_eq!(
                ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(),
                cfg
            );
            n += 1;
        }
    }
    assert!(n >= 10);
}

#[test]
fn invalid_configs_are_validation_errors() {
    let cases = [
        SMALL.replace("version = 1", "version = 2"),
        SMALL.replace("tau = 0.001", "tau = -1.0"),
        SMALL.replace("n = 21", "n = 1"),
        SMALL.replace("[initial]\nkind = \"sine\"", ""),
        SMALL.replace("experiment = \"oracle-run\"", "experiment = \"relax-onet\""),
        SMALL.replace("steps = 5", "steps = 5\nunknown_key = 3"),
        SMALL.replace("kind = \"l2\"", "kind = \"h1\""),
    ];
    for text in cases {
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn output_root_and_override_resolve_the_run_directory() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let over = Path::new("/tmp/elsewhere");
    assert_eq!(cfg.run_dir(Some(over)), over);
    assert!(cfg.run_dir(None).ends_with("small"));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.toml");
    std::fs::write(&good, SMALL).unwrap();
    let strict = tmp.path().join("strict.toml");
    // Five implicit steps cannot match the exponential to 1e-12.
    std::fs::write(
        &strict,
        format!("{SMALL}\n[acceptance]\nmax_error = 1e-12\n"),
    )
    .unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("version = 1", "version = 9")).unwrap();

    assert_eq!(code(pfonet().arg("validate-config").arg(&good)), 0);
    assert_eq!(code(pfonet().arg("validate-config").arg(&bad)), 1);
    assert_eq!(
        code(
            pfonet()
                .arg("validate-config")
                .arg(tmp.path().join("missing.toml"))
        ),
        1
    );
    let out = tmp.path().join("run");
    assert_eq!(
        code(pfonet().arg("run").arg(&good).arg("--output").arg(&out)),
        0
    );
    assert!(out.join("summary.json").is_file());
    assert!(out.join("timing.json").is_file());
    assert!(out.join("trajectory/energy.csv").is_file());
    assert_eq!(
        code(
            pfonet()
                .arg("run")
                .arg(&strict)
                .arg("--output")
                .arg(tmp.path().join("s"))
        ),
        3
    );
    // The environment variable sets the output root.
    let root = tmp.path().join("root");
    assert_eq!(
        code(
            pfonet()
                .env("PFONET_OUTPUT_ROOT", &root)
                .arg("run")
                .arg(&good)
        ),
        0
    );
    assert!(root.join("small/summary.json").is_file());
}

#[test]
fn compare_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&cfg, &a).unwrap();
    run(&cfg, &b).unwrap();
    let rep = compare(&a, "trajectory", &b, "trajectory").unwrap();
    assert_eq!(rep.samples, 6);
    assert_eq!(rep.mse, 0.0);
    assert_eq!(rep.max_error, 0.0);
    assert_eq!(rep.r2, Some(1.0));
    assert!(matches!(
        compare(&a, "nope", &b, "trajectory"),
        Err(CliError::Validation(_))
    ));

    // Same experiment on another grid cannot be compared.
    let other = ExperimentConfig::from_toml(&SMALL.replace("n = 21", "n = 31")).unwrap();
    let c = tmp.path().join("c");
    run(&other, &c).unwrap();
    assert!(matches!(
        compare(&a, "trajectory", &c, "trajectory"),
        Err(CliError::Validation(_))
    ));

    let csv = tmp.path().join("fields.csv");
    let status = pfonet()
        .arg("export")
        .arg(&a)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("set,sample,node,x,value"));
    assert_eq!(lines.count(), 6 * 21);
    let out = pfonet()
        .arg("compare")
        .arg(&a)
        .arg(&b)
        .arg("--set-a")
        .arg("trajectory")
        .arg("--set-b")
        .arg("trajectory")
        .output()
        .unwrap();
    assert!(out.status.success());
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["mse"], 0.0);
}

#[test]
fn oracle_run_preset_is_deterministic_and_accurate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&preset("oracle-run")).unwrap();
    let a = run(&cfg, &tmp.path().join("a")).unwrap();
    let b = run(&cfg, &tmp.path().join("b")).unwrap();
    assert!(a.failed.is_empty());
    assert_eq!(
        std::fs::read(a.dir.join("summary.json")).unwrap(),
        std::fs::read(b.dir.join("summary.json")).unwrap()
    );
    let sets = FieldSets::load(&a.dir).unwrap();
    assert_eq!(sets.experiment, ExperimentId::OracleRun);
    assert_eq!(sets.sets["trajectory"].len(), 101);
}

#[test]
fn smoothness_study_orders_roughness() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&preset("smoothness-study")).unwrap();
    let out = run(&cfg, tmp.path()).unwrap();
    assert_eq!(out.summary["roughness_decreasing"], true);
    assert!(tmp.path().join("study.csv").is_file());
}

#[test]
fn cahn_hilliard_pinn_conserves_mass_and_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&preset("ch1d-pinn")).unwrap();
    let out = run(&cfg, tmp.path()).unwrap();
    assert!(out.failed.is_empty(), "{:?}", out.failed);
    assert_eq!(out.summary["energy_increases"], 0);
    assert!(out.summary["mass_drift"].as_f64().unwrap() <= 1e-10);
    assert!(tmp.path().join("checkpoints/step_0001.ckpt").is_file());
}
