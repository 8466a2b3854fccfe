use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
seed = 4
synthetic.n_images = 4
epochs = 1
epoch_size = 16
batch_size = 8
infer.stride = 8
folds = 2
";

fn macnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_macnn")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = macnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&macnn(&[])), 2);
    assert_eq!(code(&macnn(&["pipeline", "--data", "d", "--out", "o"])), 2);
    assert_eq!(code(&macnn(&["train-basic", "--data", "d", "--out", "o"])), 2);
    assert_eq!(code(&macnn(&["no-such-command"])), 2);
}

#[test]
fn version_lists_tool_and_formats() {
    let text = ok(&["--version"]);
    assert!(text.starts_with("macnn "));
    assert!(text.contains("pmap"));
}

#[test]
fn errors_map_to_category_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "learning_rate = -1\n").unwrap();
    let out = macnn(&["gen-synthetic", "--config", p(&bad), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let missing = dir.path().join("nowhere");
    assert_eq!(code(&macnn(&["preprocess", "--data", p(&missing), "--out", p(&dir.path().join("y"))])), 3);

    let cfg = tiny_config(dir.path());
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = macnn(&["train-basic", "--config", p(&cfg), "--data", p(&empty), "--out", p(&dir.path().join("b.ckpt"))]);
    assert_eq!(code(&out), 11);
}

#[test]
fn staged_commands_chain_and_enforce_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let c = p(&cfg);
    let (raw, pre) = (d.join("raw"), d.join("pre"));
    let (basic, fin) = (d.join("basic.ckpt"), d.join("final.ckpt"));
    let (bmaps, fmaps) = (d.join("maps_basic"), d.join("maps_final"));
    let (cands, eval) = (d.join("candidates.csv"), d.join("eval"));

    ok(&["gen-synthetic", "--config", c, "--out", p(&raw)]);
    ok(&["preprocess", "--config", c, "--data", p(&raw), "--out", p(&pre)]);

    // Stage two before any stage-one maps exist.
    let early = macnn(&["train-final", "--config", c, "--data", p(&pre), "--prob-maps", p(&bmaps), "--out", p(&fin)]);
    assert_eq!(code(&early), 11);

    ok(&["train-basic", "--config", c, "--data", p(&pre), "--out", p(&basic)]);
    ok(&["infer-basic", "--config", c, "--checkpoint", p(&basic), "--data", p(&pre), "--out", p(&bmaps)]);
    ok(&["train-final", "--config", c, "--data", p(&pre), "--prob-maps", p(&bmaps), "--out", p(&fin)]);

    let ungated = macnn(&["infer", "--config", c, "--checkpoint", p(&fin), "--data", p(&pre), "--out", p(&fmaps)]);
    assert_eq!(code(&ungated), 11);
    ok(&["infer", "--config", c, "--checkpoint", p(&fin), "--data", p(&pre), "--prob-maps", p(&bmaps), "--out", p(&fmaps)]);

    // A basic checkpoint is not a final-network checkpoint.
    let wrong = macnn(&["infer", "--config", c, "--checkpoint", p(&basic), "--data", p(&pre), "--prob-maps", p(&bmaps), "--out", p(&d.join("w"))]);
    assert_eq!(code(&wrong), 9);

    ok(&["postprocess", "--config", c, "--data", p(&pre), "--prob-maps", p(&fmaps), "--out", p(&cands)]);
    let printed = ok(&["evaluate", "--config", c, "--data", p(&pre), "--candidates", p(&cands), "--out", p(&eval)]);
    assert!(printed.starts_with("cpm "));
    let report = ok(&["froc-report", "--froc", p(&eval.join("froc.csv"))]);
    assert!(report.contains("this run"));
    assert!(report.contains("(!)"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    let inputs = manifest["inputs"].as_object().unwrap();
    assert!(!inputs.is_empty());
    assert!(inputs.values().all(|v| v.as_str().is_some_and(|h| h.len() == 64)));
    assert!(Path::new(&format!("{}.manifest.json", p(&basic))).exists());
}

#[test]
fn pipeline_reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let raw = d.join("raw");
    ok(&["gen-synthetic", "--config", p(&cfg), "--out", p(&raw)]);
    ok(&["--threads", "1", "pipeline", "--config", p(&cfg), "--data", p(&raw), "--out", p(&d.join("run1"))]);
    ok(&["--threads", "3", "pipeline", "--config", p(&cfg), "--data", p(&raw), "--out", p(&d.join("run2"))]);
    for name in ["candidates.csv", "froc.csv", "operating_points.csv", "folds.csv"] {
        let a = std::fs::read(d.join("run1").join(name)).unwrap();
        let b = std::fs::read(d.join("run2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let text = std::fs::read_to_string(d.join("run1").join("froc.csv")).unwrap();
    assert!(text.starts_with("threshold,avg_fp_per_image,sensitivity"));
}
