//! End-to-end runs of the `deepfdm` binary and its on-disk formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepfdm::datagen::{build_dataset, Dataset};
use deepfdm::io::{self, StoredModel, DATASET_MANIFEST, MODEL_MANIFEST};
use deepfdm::metrics::EvalReport;
use deepfdm::solver::CoeffSet;
use deepfdm::Error;

const SMALL: &[&str] = &[
    "--set",
    "grid.dim=1",
    "--set",
    "grid.n=32",
    "--set",
    "grid.dt=1e-3",
    "--set",
    "data.factor=2",
    "--set",
    "data.samples=16",
];

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepfdm"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and stderr of a run expected to fail.
fn fails(args: &[&str]) -> (i32, String) {
    let out = cli(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_small(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["gen", "--seed", "11", "--out", s(&out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--seed", "2", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(&["--set", "train.epochs=4", "--set", "train.lr=0.05"]);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn gen_writes_blobs_manifest_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen_small(tmp.path(), "a", &[]);
    let b = gen_small(tmp.path(), "b", &[]);
    let ma = std::fs::read_to_string(a.join(DATASET_MANIFEST)).unwrap();
    assert_eq!(
        ma,
        std::fs::read_to_string(b.join(DATASET_MANIFEST)).unwrap()
    );
    let stored = io::load_dataset_manifest(&a).unwrap();
    assert_eq!(stored.blobs.len(), 16);
    assert_eq!(stored.layout.bytes_per_sample, 6 * 32 * 8);
    assert!(a.join("config.toml").exists() && a.join("timing.csv").exists());
    // The manifest alone regenerates the data.
    let rebuilt = build_dataset(&stored.manifest).unwrap();
    assert_eq!(rebuilt, io::load_dataset(&a).unwrap());
}

#[test]
fn gen_with_no_samples_writes_only_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = gen_small(tmp.path(), "empty", &["--set", "data.samples=0"]);
    let stored = io::load_dataset_manifest(&d).unwrap();
    assert!(stored.blobs.is_empty());
    assert!(!d.join(io::sample_file(0)).exists());
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d = gen_small(tmp.path(), "d", &[]);
    let (code, err) = fails(&["gen", "--seed", "1", "--out", s(&d)]);
    assert_eq!(code, 2);
    assert!(err.contains("--force"), "{err}");
    let mut args = vec!["gen", "--seed", "11", "--out", s(&d), "--force"];
    args.extend_from_slice(SMALL);
    ok(&args);
}

#[test]
fn cfl_violations_name_the_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let (code, err) = fails(&[
        "gen",
        "--seed",
        "1",
        "--out",
        s(&out),
        "--set",
        "grid.dt=0.01",
        "--set",
        "bounds.diffusion={lo=0.0, hi=0.01}",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("C_a"), "{err}");

    let mut args = vec![
        "gen",
        "--seed",
        "1",
        "--out",
        s(&out),
        "--set",
        "data.fine_substeps=1",
    ];
    args.extend_from_slice(SMALL);
    let (code, err) = fails(&args);
    assert_eq!(code, 2);
    assert!(err.contains("C_a"), "{err}");
    assert!(!out.exists(), "nothing is written for an invalid config");
}

#[test]
fn invalid_config_reports_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let (code, err) = fails(&[
        "gen",
        "--seed",
        "1",
        "--out",
        s(&out),
        "--set",
        "train.lr=-1",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("train.lr"), "{err}");
    let (code, _) = fails(&["gen", "--out", s(&out)]);
    assert_eq!(code, 2, "--seed is mandatory");
    let (code, _) = fails(&["train", "--data", s(&out), "--out", s(&out)]);
    assert_eq!(code, 2, "--seed is mandatory");
}

#[test]
fn blow_up_exits_with_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let (code, err) = fails(&[
        "gen",
        "--seed",
        "1",
        "--out",
        s(&out),
        "--set",
        "grid.dim=1",
        "--set",
        "grid.n=16",
        "--set",
        "terms=[\"reaction\"]",
        "--set",
        "bounds.reaction={lo=0.0, hi=500.0}",
        "--set",
        "data.samples=2",
    ]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("reaction"), "{err}");
}

#[test]
fn train_resume_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_small(tmp.path(), "data", &[]);
    let m1 = tmp.path().join("m1");
    train_small(&data, &m1, &[]);
    let loss1 = std::fs::read_to_string(m1.join("loss.csv")).unwrap();
    let rows1: Vec<&str> = loss1.lines().collect();
    assert_eq!(rows1[0], "epoch,train_loss,val_loss");
    assert_eq!(rows1.len(), 1 + 5);
    assert!(std::fs::read_to_string(m1.join("timing.csv"))
        .unwrap()
        .starts_with("epoch,wall_seconds"));

    // Resuming keeps the parameters and the epoch count.
    let m2 = tmp.path().join("m2");
    train_small(&data, &m2, &["--resume", s(&m1)]);
    let first = io::load_model(&m1).unwrap();
    let second = io::load_model(&m2).unwrap();
    assert_eq!(first.epochs, 4);
    assert_eq!(second.epochs, 8);
    assert_eq!(
        second.state.as_ref().unwrap().step,
        2 * first.state.as_ref().unwrap().step
    );
    let loss2 = std::fs::read_to_string(m2.join("loss.csv")).unwrap();
    let start: Vec<&str> = loss2.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(start[0], "4");
    let fresh_start: f64 = rows1[1].split(',').nth(1).unwrap().parse().unwrap();
    let last_before: f64 = rows1[5].split(',').nth(1).unwrap().parse().unwrap();
    let resumed_start: f64 = start[1].parse().unwrap();
    assert!(
        resumed_start < 0.9 * fresh_start,
        "resumed at {resumed_start}, fresh start {fresh_start}"
    );
    assert!((resumed_start - last_before).abs() < 0.5 * last_before);

    let e = tmp.path().join("eval");
    let out = ok(&[
        "eval",
        "--model",
        s(&m2),
        "--data",
        s(&data),
        "--out",
        s(&e),
        "--ood",
        "0.99,0,0.64",
        "--coeffs",
    ]);
    assert!(out.contains("nmse_mean_slices"));
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    let h2: Vec<f64> = report.ood.iter().map(|p| p.target_h2).collect();
    assert_eq!(h2, vec![0.0, 0.64, 0.99]);
    assert!(report.ood.iter().all(|p| (p.h2 - p.target_h2).abs() < 1e-6));
    assert_eq!(report.samples, 2);
    assert!(e.join("report.csv").exists() && e.join("config.toml").exists());
    let grid = std::fs::read_to_string(e.join("coeffs").join("diffusion.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1);
    assert_eq!(grid.trim().split(',').count(), 32);

    let e2 = tmp.path().join("eval_plain");
    ok(&[
        "eval",
        "--model",
        s(&m2),
        "--data",
        s(&data),
        "--out",
        s(&e2),
    ]);
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(e2.join("report.json")).unwrap()).unwrap();
    assert!(report.ood.is_empty());
    assert!(report.nmse.is_some());
}

#[test]
fn mismatched_grids_fail_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen_small(tmp.path(), "a", &[]);
    let b = gen_small(tmp.path(), "b", &["--set", "grid.n=16"]);
    let m = tmp.path().join("m");
    train_small(&a, &m, &["--set", "train.epochs=1"]);
    let out = tmp.path().join("m2");
    let (code, err) = fails(&[
        "train",
        "--seed",
        "1",
        "--data",
        s(&b),
        "--out",
        s(&out),
        "--resume",
        s(&m),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("grid"), "{err}");
    assert!(!out.exists());
    let (code, _) = fails(&[
        "train",
        "--seed",
        "1",
        "--data",
        s(&a),
        "--out",
        s(&out),
        "--set",
        "grid.n=64",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn verify_detects_flipped_bytes_and_version_bumps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = gen_small(tmp.path(), "d", &[]);
    let m = tmp.path().join("m");
    train_small(&d, &m, &["--set", "train.epochs=1"]);
    assert!(ok(&["verify", s(&d)]).contains("16 blobs"));
    assert!(ok(&["verify", s(&m)]).contains("3 blobs"));

    let blob = d.join(io::sample_file(3));
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[100] ^= 0x01;
    std::fs::write(&blob, bytes).unwrap();
    let (code, err) = fails(&["verify", s(&d)]);
    assert_eq!(code, 4);
    assert!(
        err.contains("sample_00003.bin") && err.contains("offset 0"),
        "{err}"
    );
    match io::load_dataset(&d) {
        Err(Error::Corruption { blob, .. }) => assert_eq!(blob, "sample_00003.bin"),
        other => panic!("{other:?}"),
    }

    let manifest = m.join(MODEL_MANIFEST);
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(
        &manifest,
        text.replace("format_version = 1", "format_version = 2"),
    )
    .unwrap();
    let (code, err) = fails(&["verify", s(&m)]);
    assert_eq!(code, 4);
    assert!(err.contains("unsupported format version 2"), "{err}");
    assert!(std::fs::read_dir(tmp.path()).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .contains("verify")));
}

#[test]
fn exact_model_evaluates_at_the_noise_floor() {
    // With factor 1 the reference data come from the model's own solver, so the
    // preimage of the true coefficients reproduces them to rounding.
    let tmp = tempfile::tempdir().unwrap();
    let d = gen_small(tmp.path(), "d", &["--set", "data.factor=1"]);
    let data: Dataset = io::load_dataset(&d).unwrap();
    let grid = data.manifest.grid;
    let truth = data.manifest.coefficients.realize(grid.mesh).unwrap();
    let coeffs = CoeffSet::preimage(grid.mesh, data.manifest.terms.clone(), &truth).unwrap();
    let m = tmp.path().join("exact");
    io::save_model(
        &m,
        &StoredModel {
            grid,
            coeffs,
            state: None,
            epochs: 0,
            epochs_to_threshold: None,
        },
        false,
    )
    .unwrap();
    let e = tmp.path().join("e");
    ok(&[
        "eval",
        "--model",
        s(&m),
        "--data",
        s(&d),
        "--out",
        s(&e),
        "--set",
        "eval.split=\"all\"",
    ]);
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.samples, 16);
    assert!(
        report.nmse.unwrap().nmse_mean_slices < 1e-6,
        "{:?}",
        report.nmse
    );
}

#[test]
fn sweep_variance_writes_one_row_per_amplitude() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep-variance",
        "--seed",
        "4",
        "--out",
        s(&out),
        "--amplitudes",
        "0,0.0001",
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "train.epochs=2"]);
    ok(&args);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("amplitude,relative_error\n0,"));
}
