use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fgn_cli::{sidecar, RunManifest, EXIT_CORRUPT, EXIT_NUMERICAL, EXIT_USAGE};

const FGN: &str = env!("CARGO_BIN_EXE_fgn");

const TINY_TRAIN: &str = r#"{"model":{"d_latent":8,"n_layers":1,"d_noise":2,"d_cond":2,"heads":2},
  "train":{"batch_size":2,"stages":[
    {"name":"single-step","rollout_len":1,"steps":6,"peak_lr":1e-3,"warmup":1},
    {"name":"ar-2","rollout_len":2,"steps":3,"peak_lr":1e-4,"warmup":1}]}}"#;

fn fgn(cwd: &Path, args: &[&str]) -> Output {
    Command::new(FGN)
        .current_dir(cwd)
        .env_remove("FGN_OUT_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = fgn(cwd, args);
    assert!(
        out.status.success(),
        "fgn {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_with(cwd: &Path, args: &[&str], code: i32) -> String {
    let out = fgn(cwd, args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(code), "fgn {args:?}: {stderr}");
    stderr
}

/// Dataset plus a two-stage tiny training config in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data", "--sites", "12", "--frames", "300", "--out", "data.fgnd"]);
    fs::write(dir.path().join("train.json"), TINY_TRAIN).unwrap();
    dir
}

#[test]
fn gen_data_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gen-data", "--sites", "12", "--frames", "300", "--out", "d.fgnd"]);
    assert!(stdout.contains("residual_std"), "{stdout}");
    let m = RunManifest::load(&sidecar(&dir.path().join("d.fgnd"))).unwrap();
    assert_eq!(m.command, "gen-data");
    assert!(m.outputs.contains_key("d.fgnd"));
}

#[test]
fn default_outputs_follow_the_out_root_variable() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(FGN)
        .current_dir(dir.path())
        .env("FGN_OUT_ROOT", "elsewhere")
        .args(["gen-data", "--sites", "12", "--frames", "200"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/dataset.fgnd").exists());

    ok(dir.path(), &["gen-data", "--sites", "12", "--frames", "200"]);
    assert!(dir.path().join("fgn-out/dataset.fgnd").exists());
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    fails_with(dir.path(), &["gen-data", "--frames", "-3"], EXIT_USAGE);
    fails_with(dir.path(), &["gen-data", "--split", "0.5,0.5"], EXIT_USAGE);
    fails_with(dir.path(), &["frobnicate"], EXIT_USAGE);
    let e = fails_with(dir.path(), &["verify", "--forecast", "missing.fgnf", "--data", "missing.fgnd", "--no-rev"], EXIT_USAGE);
    assert!(e.contains("missing"), "{e}");
}

#[test]
fn invalid_config_file_is_a_usage_error() {
    let dir = workspace();
    fs::write(dir.path().join("bad.json"), r#"{"model":{"d_latent":7,"heads":2}}"#).unwrap();
    fails_with(
        dir.path(),
        &["train", "--data", "data.fgnd", "--config", "bad.json", "--out", "t"],
        EXIT_USAGE,
    );
    fs::write(dir.path().join("garbled.json"), "{ not json").unwrap();
    fails_with(
        dir.path(),
        &["train", "--data", "data.fgnd", "--config", "garbled.json", "--out", "t"],
        EXIT_USAGE,
    );
}

#[test]
fn truncated_dataset_is_reported_as_corrupt() {
    let dir = workspace();
    let path = dir.path().join("data.fgnd");
    let bytes = fs::read(&path).unwrap();
    fs::write(dir.path().join("cut.fgnd"), &bytes[..bytes.len() / 2]).unwrap();
    fails_with(
        dir.path(),
        &["train", "--data", "cut.fgnd", "--config", "train.json", "--out", "t"],
        EXIT_CORRUPT,
    );
}

#[test]
fn divergent_training_exits_with_numerical_failure() {
    let dir = workspace();
    let cfg = r#"{"model":{"d_latent":8,"n_layers":1,"d_noise":2,"d_cond":2,"heads":2},
      "train":{"batch_size":2,"stages":[
        {"name":"single-step","rollout_len":1,"steps":40,"peak_lr":1e150,"warmup":0}]}}"#;
    fs::write(dir.path().join("wild.json"), cfg).unwrap();
    let e = fails_with(
        dir.path(),
        &["train", "--data", "data.fgnd", "--config", "wild.json", "--out", "t"],
        EXIT_NUMERICAL,
    );
    assert!(e.contains("single-step"), "{e}");
}

#[test]
fn train_forecast_verify_round_trip() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &["gen-data", "--sites", "12", "--frames", "1000", "--seed", "5", "--out", "clim.fgnd"]);
    ok(p, &["train", "--data", "data.fgnd", "--config", "train.json", "--seeds", "2", "--out", "t"]);
    for f in ["t/manifest.json", "t/seed-0/model.ckpt", "t/seed-1/stage-single-step.ckpt"] {
        assert!(p.join(f).exists(), "{f}");
    }
    let m = RunManifest::load(&p.join("t/manifest.json")).unwrap();
    assert!(m.outputs.contains_key("seed-1/model.ckpt"));
    assert!(m.diagnostics.iter().any(|d| d.ends_with("log.jsonl")));

    // Members must split evenly over checkpoints.
    let e = fails_with(
        p,
        &["forecast", "--data", "data.fgnd", "--checkpoint", "t/seed-0/model.ckpt,t/seed-1/model.ckpt", "--members", "3", "--inits", "2", "--lead", "3", "--out", "f.fgnf"],
        EXIT_USAGE,
    );
    assert!(e.contains("same number of members"), "{e}");

    ok(
        p,
        &["forecast", "--data", "data.fgnd", "--checkpoint", "t/seed-0/model.ckpt,t/seed-1/model.ckpt", "--members", "4", "--inits", "3", "--lead", "4", "--out", "f.fgnf"],
    );
    assert!(sidecar(&p.join("f.fgnf")).exists());

    let e = fails_with(p, &["verify", "--forecast", "f.fgnf", "--data", "data.fgnd", "--out", "r.json"], EXIT_USAGE);
    assert!(e.contains("--no-rev"), "{e}");

    fs::write(p.join("v.json"), r#"{"pool_widths":[2,4]}"#).unwrap();
    let table = ok(
        p,
        &["verify", "--forecast", "f.fgnf", "--data", "data.fgnd", "--climatology", "clim.fgnd", "--config", "v.json", "--csv", "--out", "r.json"],
    );
    assert!(table.contains("spread_skill"), "{table}");
    let report: fgn_core::MetricsReport = serde_json::from_str(&fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert_eq!((report.members, report.leads, report.sites), (4, 4, 12));
    assert!(report.value("crps", 1).unwrap() > 0.0);
    assert!(!report.rev.is_empty());
    assert!(p.join("r.csv").exists());

    // A forecast verified against a different dataset is refused.
    let e = fails_with(
        p,
        &["verify", "--forecast", "f.fgnf", "--data", "clim.fgnd", "--no-rev", "--out", "x.json"],
        EXIT_USAGE,
    );
    assert!(!e.is_empty());
}

#[test]
fn interrupted_training_resumes_to_identical_checkpoints() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &["train", "--data", "data.fgnd", "--config", "train.json", "--out", "whole", "--checkpoint-every", "2"]);
    ok(
        p,
        &["train", "--data", "data.fgnd", "--config", "train.json", "--out", "split", "--checkpoint-every", "2", "--stop-after", "7"],
    );
    assert!(!p.join("split/seed-0/model.ckpt").exists());
    ok(p, &["train", "--data", "data.fgnd", "--config", "train.json", "--out", "split", "--checkpoint-every", "2", "--resume"]);
    for f in ["seed-0/model.ckpt", "seed-0/stage-single-step.ckpt"] {
        assert_eq!(fs::read(p.join("whole").join(f)).unwrap(), fs::read(p.join("split").join(f)).unwrap(), "{f}");
    }
    let a = RunManifest::load(&p.join("whole/manifest.json")).unwrap();
    let b = RunManifest::load(&p.join("split/manifest.json")).unwrap();
    assert_eq!(a.outputs, b.outputs);
}

#[test]
fn steps_override_and_single_step_only_shape_the_run() {
    let dir = workspace();
    let p = dir.path();
    ok(
        p,
        &["train", "--data", "data.fgnd", "--config", "train.json", "--steps", "3", "--single-step-only", "--noise-sharing", "per-site", "--out", "t"],
    );
    let log = fs::read_to_string(p.join("t/seed-0/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(!p.join("t/seed-0/stage-ar-2.ckpt").exists());
    let model = fgn_core::fgnnet::load_checkpoint(&p.join("t/seed-0/model.ckpt")).unwrap();
    assert_eq!(model.config.noise_sharing, fgn_core::fgnnet::NoiseSharing::PerSite);
    assert_eq!(model.provenance, vec!["single-step".to_string()]);
}
