//! Drives the compiled binary: exit codes, stage composition, output.

use std::path::Path;
use std::process::{Command, Output};

fn canids(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canids"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "\
seed = 21
output = \"out\"

[data]
frames_per_class = 3000

[window]
frames = 200
stride = 100

[forest]
miners = 2

[substitute]
mlp_epochs = 60

[attack]
methods = [\"fgsm0.36\", \"svm\"]

[detector]
permutations = 120
sizes = [10]
size_trials = 3
proportions = [0.0, 1.0]
mixture_size = 10
mixture_trials = 2
mixture_method = \"fgsm0.36\"

[evaluate]
users = [2]
";

#[test]
fn staged_run_matches_registry_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);

    let train = canids(&["--config", &cfg, "train"], dir.path());
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(dir.path().join("out/registry/chain.txt").exists());
    assert!(dir.path().join("out/manifest.txt").exists());

    let verify = canids(&["--config", &cfg, "registry", "verify"], dir.path());
    assert!(verify.status.success());
    let stdout = String::from_utf8_lossy(&verify.stdout);
    assert!(stdout.contains("registry ok: 2 blocks"), "{stdout}");

    let show = canids(&["--config", &cfg, "registry", "show"], dir.path());
    let text = String::from_utf8_lossy(&show.stdout);
    assert!(text.starts_with("block 0 "), "{text}");
    assert!(text.lines().last().unwrap().starts_with("head "), "{text}");
}

#[test]
fn invalid_config_exits_1_listing_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 1\noutput = \"out\"\n[forest]\nminers = 0\n[detector]\nalpha = 2.0\n",
    );
    let out = canids(&["--config", &cfg, "train"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("miner"), "{err}");
    assert!(err.contains("alpha"), "{err}");
}

#[test]
fn missing_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = canids(&["--config", "absent.toml", "train"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tampered_chain_fails_verify_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(canids(&["--config", &cfg, "train"], dir.path()).status.success());

    let chain_path = dir.path().join("out/registry/chain.txt");
    let text = std::fs::read_to_string(&chain_path).unwrap();
    std::fs::write(&chain_path, text.replace("miner00", "miner99")).unwrap();

    let out = canids(&["--config", &cfg, "registry", "verify"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flag_overrides_reroute_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = canids(
        &["--config", &cfg, "--output", "elsewhere", "--seed", "77", "features"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/features_train.csv").exists());
    let manifest = std::fs::read_to_string(dir.path().join("elsewhere/manifest.txt")).unwrap();
    assert!(manifest.contains("seed 77"), "{manifest}");
}
