use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "seed = 11
[synth]
docs = 300
[lm]
d_model = 32
epochs = 2
[topic_model]
epochs = 10
k = 3
[discriminator]
epochs = 3
[generation]
samples = 1
prefixes = [\"It is\"]
[steering]
length = 6
grad_iterations = 2
";

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topicsteer"))
        .current_dir(dir)
        .args(["-w", "ws"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn stages_end_to_end() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "small.toml"];
    let out = ok(d, &[&c[..], &["synth", "--topics", "3", "--docs", "300"]].concat());
    assert!(out.contains("300 documents"));
    ok(d, &[&c[..], &["ingest"]].concat());
    ok(d, &[&c[..], &["lm-train"]].concat());
    ok(d, &[&c[..], &["tm-train"]].concat());
    ok(d, &[&c[..], &["label", "--retain-top", "3"]].concat());
    ok(d, &[&c[..], &["disc-train"]].concat());
    for tag in ["weak", "strong"] {
        let step = if tag == "weak" { "0.05" } else { "0.3" };
        ok(d, &[&c[..], &["generate", "--tag", tag, "--step-size", step]].concat());
        ok(d, &[&c[..], &["auto-eval", "--tag", tag]].concat());
    }
    let cmp = ok(d, &[&c[..], &["auto-eval", "--compare", "weak", "strong"]].concat());
    assert!(cmp.starts_with("weak "));
    ok(d, &["report"]);
    let ws = d.join("ws");
    for f in ["lm.bin", "topic_model.bin", "disc.bin", "generations_weak.jsonl", "comparison.csv", "report/summary.md"] {
        assert!(ws.join(f).is_file(), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.join("lm-train.meta.json")).unwrap()).unwrap();
    assert!(meta["inputs"].as_object().is_some_and(|m| !m.is_empty()), "{meta}");

    // rerunning a stage with the same inputs reproduces its outputs byte for byte
    let before = fs::read(ws.join("disc.bin")).unwrap();
    ok(d, &[&c[..], &["disc-train"]].concat());
    assert_eq!(before, fs::read(ws.join("disc.bin")).unwrap());
}

#[test]
fn missing_artifact_exits_2() {
    let dir = setup();
    let out = cli(dir.path(), &["lm-train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocab.json"));
    assert_eq!(cli(dir.path(), &["auto-eval", "--tag", "x"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["report"]).status.code(), Some(2));
}

#[test]
fn bad_config_exits_1() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[topic_model]\nk = 1\n").unwrap();
    assert_eq!(cli(d, &["--config", "bad.toml", "synth"]).status.code(), Some(1));
    fs::write(d.join("v2.toml"), "version = 2\n").unwrap();
    assert_eq!(cli(d, &["--config", "v2.toml", "synth"]).status.code(), Some(1));
    assert_eq!(cli(d, &["synth", "--noise", "3.0"]).status.code(), Some(1));
    assert_eq!(cli(d, &["generate", "--tag", "../escape"]).status.code(), Some(1));
}
