use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn frameweave(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frameweave")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&frameweave(&["synth", "--count", "4", "--size", "16x16", "--seed", "3", "--out", "data", "--images"], d));
    assert!(d.join("data/dataset.fwds").exists());
    assert!(d.join("data/triplet_000000_mid.ppm").exists());

    fs::write(d.join("cfg.toml"), "epochs = 2\nembed_dim = 4\nbatch_size = 2\nval_fraction = 0.25\n").unwrap();
    let log = ok(&frameweave(&["train", "--config", "cfg.toml", "--data", "data", "--out", "run"], d));
    assert!(log.contains("epoch     2"), "{log}");
    let curve = fs::read_to_string(d.join("run/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2 * 2);

    ok(&frameweave(&["train", "--resume", "run/final.fwck", "--epochs", "3", "--data", "data", "--out", "run"], d));
    assert_eq!(fs::read_to_string(d.join("run/curve.csv")).unwrap().lines().count(), 1 + 2 * 3);

    let args = ["interpolate", "--ckpt", "run/final.fwck", "--a", "data/triplet_000000_a.ppm", "--b", "data/triplet_000000_b.ppm", "--out", "mid.png"];
    ok(&frameweave(&args, d));
    assert!(d.join("mid.png").exists());

    let report = ok(&frameweave(&["eval", "--ckpt", "run/final.fwck", "--data", "data", "--out", "eval", "--compare", "1"], d));
    assert!(report.contains("4 triplets"), "{report}");
    assert!(d.join("eval/metrics.csv").exists() && d.join("eval/compare_000000.png").exists());
    let truth = ok(&frameweave(&["eval", "--mode", "truth", "--data", "data", "--out", "truth"], d));
    assert!(truth.contains("99.00 dB"), "{truth}");
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&frameweave(&["gradcheck", "--trials", "1"], dir.path()));
    assert!(out.contains("all gradient checks passed"));
    assert!(out.contains("conv 7x7") && out.contains("mse encoding"));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&frameweave(&["synth", "--count", "2", "--size", "16x16", "--out", "data"], d));
    fs::write(d.join("bad.toml"), "epochs = 0\n").unwrap();
    let out = frameweave(&["train", "--config", "bad.toml", "--data", "data", "--out", "run"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));

    fs::write(d.join("junk.fwck"), b"junk").unwrap();
    let out = frameweave(&["eval", "--ckpt", "junk.fwck", "--data", "data", "--out", "e"], d);
    assert!(!out.status.success());
    assert!(!frameweave(&["synth", "--count", "2", "--size", "16by16", "--out", "x"], d).status.success());
}
