//! Subcommand behaviour, exit codes and manifests.

use std::path::{Path, PathBuf};
use std::process::Command;

use lfvar_cli::run;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.toml")
}

fn lfvar(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec![
        "lfvar".to_string(),
        "--config".into(),
        fixture().display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv, &[])
}

fn only_run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "expected one run directory: {dirs:?}");
    dirs.remove(0)
}

fn manifest(run_dir: &Path, sub: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(run_dir.join("manifests").join(format!("{sub}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn make_toy_writes_dataset_and_manifest() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lfvar(out.path(), &["make-toy"]), 0);
    let data = out.path().join("data");
    for f in ["manifest.jsonl", "train.jsonl", "test.jsonl"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let run_dir = only_run_dir(out.path());
    for sub in ["checkpoints", "images", "reports", "manifests"] {
        assert!(run_dir.join(sub).is_dir());
    }
    let m = manifest(&run_dir, "make-toy");
    assert_eq!(m["subcommand"], "make-toy");
    assert_eq!(m["run_id"].as_str().unwrap().len(), 12);
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lfvar(out.path(), &["frobnicate"]), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_lfvar")).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn generate_inter_before_build_codebook_fails_validation() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lfvar(out.path(), &["make-toy"]), 0);
    assert_eq!(lfvar(out.path(), &["generate", "--mode", "inter", "--class", "2"]), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_lfvar"))
        .args(["--config", &fixture().display().to_string(), "--out"])
        .arg(out.path())
        .args(["generate", "--mode", "inter", "--class", "2"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("class 2 has no measurement statistics"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn scale_mismatch_names_both_lists() {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lfvar"))
        .args(["--config", &fixture().display().to_string(), "--out"])
        .arg(out.path())
        .args(["--set", "var.scales=[[1,1],[8,8]]", "train-var"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[(1, 1), (2, 2), (4, 4), (8, 8)]"), "{err}");
    assert!(err.contains("[(1, 1), (8, 8)]"), "{err}");
}

#[test]
fn config_rejects_fm_with_am_and_am_without_codebook() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lfvar(out.path(), &["--set", "ablation.FM=true", "--set", "ablation.AM=true", "make-toy"]), 1);
    assert_eq!(lfvar(out.path(), &["--set", "measurements.codebook=\"\"", "make-toy"]), 1);
    assert_eq!(
        lfvar(out.path(), &["--set", "measurements.codebook=\"\"", "--set", "ablation.AM=false", "make-toy"]),
        0
    );
}

#[test]
fn training_before_data_is_a_validation_error() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lfvar(out.path(), &["train-vqvae"]), 1);
}

#[test]
fn env_and_seed_overrides_change_the_run_id() {
    let out = tempfile::tempdir().unwrap();
    let base = vec![
        "lfvar".to_string(),
        "--config".into(),
        fixture().display().to_string(),
        "--out".into(),
        out.path().display().to_string(),
        "make-toy".into(),
    ];
    assert_eq!(run(base.clone(), &[]), 0);
    assert_eq!(run(base.clone(), &[("LFVAR_VAR__DEPTH".into(), "2".into())]), 0);
    let mut seeded = base.clone();
    seeded.insert(1, "--seed".into());
    seeded.insert(2, "9".into());
    assert_eq!(run(seeded, &[]), 0);
    let n = std::fs::read_dir(out.path().join("runs")).unwrap().count();
    assert_eq!(n, 3);
}

#[test]
fn pipeline_runs_and_manifests_are_reproducible() {
    let steps: [&[&str]; 6] = [
        &["make-toy"],
        &["train-vqvae"],
        &["train-var"],
        &["build-codebook"],
        &["generate", "--mode", "inter", "--class", "1", "--count", "2"],
        &["evaluate"],
    ];
    let names = ["make-toy", "train-vqvae", "train-var", "build-codebook", "generate-inter", "evaluate"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        for s in steps {
            assert_eq!(lfvar(out.path(), s), 0, "{s:?} failed");
        }
        let run_dir = only_run_dir(out.path());
        assert!(run_dir.join("reports/evaluation.json").is_file());
        assert!(run_dir.join("reports/fid_matrix.csv").is_file());
        let ms: Vec<serde_json::Value> = names.iter().map(|n| manifest(&run_dir, n)).collect();
        let weights = std::fs::read(run_dir.join("checkpoints/var/var.safetensors")).unwrap();
        let report = std::fs::read_to_string(run_dir.join("reports/evaluation.json")).unwrap();
        runs.push((ms, weights, report, out));
    }
    assert_eq!(runs[0].0, runs[1].0, "manifests differ between identical runs");
    assert!(runs[0].1 == runs[1].1, "generator weights differ");
    assert_eq!(runs[0].2, runs[1].2);
}
