use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualafford"))
}

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(tiny_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn selftest_exits_zero_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().arg("--out").arg(dir.path()).arg("selftest").output().unwrap();
    ok(&o);
    assert!(dir.path().join("manifest-selftest.json").exists());
}

#[test]
fn unknown_command_is_a_usage_error() {
    let o = bin().arg("shove").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = bin().arg("collect").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_without_checkpoint_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["eval"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.daf"), "{err}");
}

#[test]
fn full_pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        for cmd in ["collect", "train", "adapt", "eval"] {
            ok(&run(dir, &[cmd]));
        }
        ok(&run(dir, &["infer"]));
        ok(&run(dir, &["export-heatmap", "--variant", "affordance-1", "--colored"]));
    }
    for name in [
        "dataset.jsonl",
        "model.daf",
        "train_loss.csv",
        "model_ca.daf",
        "ca_dataset.jsonl",
        "adapt_loss.csv",
        "eval.json",
        "infer.json",
        "heatmap-affordance-1.csv",
        "heatmap-affordance-1.xyzrgb",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn seed_override_changes_the_dataset() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&run(a.path(), &["collect"]));
    ok(&run(b.path(), &["--seed", "11", "collect"]));
    assert_ne!(read(a.path(), "dataset.jsonl"), read(b.path(), "dataset.jsonl"));
}

#[test]
fn heatmap_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(dir.path(), &["collect"]));
    ok(&run(dir.path(), &["train"]));
    ok(&run(dir.path(), &["export-heatmap", "--variant", "affordance-1"]));
    let text = String::from_utf8(read(dir.path(), "heatmap-affordance-1.csv")).unwrap();
    assert_eq!(text.lines().count(), 64 + 1);
    let u1 = "0,0,0,1,0,0,0,1,0";
    ok(&run(dir.path(), &["export-heatmap", "--variant", "affordance-2", "--u1", u1]));
    let text = String::from_utf8(read(dir.path(), "heatmap-affordance-2.csv")).unwrap();
    assert_eq!(text.lines().count(), 64 + 1);
    let o = run(dir.path(), &["export-heatmap", "--variant", "critic-2"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--u1"));
    assert!(!run(dir.path(), &["export-heatmap", "--variant", "nope"]).status.success());
}
