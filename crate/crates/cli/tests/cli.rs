//! End-to-end runs of the `interleave` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn interleave(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interleave"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn show_prints_the_delay_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let o = interleave(tmp.path(), &["patterns", "show", "--kind", "delay", "-T", "3", "-K", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("S=4"), "{text}");
    assert!(text.contains("k1  1 2 3 ."), "{text}");
    assert!(text.contains("k2  . 1 2 3"), "{text}");
}

#[test]
fn broken_pattern_lists_violations_and_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("broken.json");
    std::fs::write(&file, r#"{"T":2,"K":1,"steps":[[],[[1,1]],[[1,1]]]}"#).unwrap();
    let o = interleave(&tmp.path().join("run"), &["patterns", "validate", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("violation:"));
}

#[test]
fn exit_codes_by_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(interleave(out, &["patterns", "bench", "--nope"]).status.code(), Some(2));
    assert_eq!(interleave(out, &["patterns", "show", "--kind", "zigzag"]).status.code(), Some(2));
    assert_eq!(interleave(out, &["chroma", "--input", "/no/such/file.wav"]).status.code(), Some(4));
    let junk = out.join("junk.wav");
    std::fs::write(&junk, b"not a wav").unwrap();
    assert_eq!(interleave(out, &["chroma", "--input", junk.to_str().unwrap()]).status.code(), Some(3));
    let guard = interleave(out, &["exactness", "--family", "product", "-T", "8", "-K", "4", "-M", "8"]);
    assert_eq!(guard.status.code(), Some(4));
}

#[test]
fn exactness_csv_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["exactness", "--family", "markov_residual", "-T", "2", "-K", "2", "-M", "3", "--seed", "4"];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(interleave(&a, &args).status.success());
    assert!(interleave(&b, &args).status.success());
    let read = |d: &Path| std::fs::read(d.join("exactness.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let diag = interleave(&tmp.path().join("c"), &["exactness", "-T", "1", "-K", "2", "-M", "2"]);
    assert!(stdout(&diag).contains("parallel,1,1,0.5"));
    let m = manifest(&a);
    assert_eq!(m["command"], "exactness");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["family"], "markov_residual");
    assert_eq!(m["artifacts"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn tone_then_chroma_is_all_class_nine() {
    let tmp = tempfile::tempdir().unwrap();
    let tone = tmp.path().join("tone");
    assert!(interleave(&tone, &["tone", "--frequency", "440", "--seconds", "2"]).status.success());
    let wav = tone.join("tone.wav");
    let o = interleave(&tmp.path().join("chroma"), &["chroma", "--input", wav.to_str().unwrap()]);
    assert!(o.status.success());
    let classes: Vec<u8> = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert!(!classes.is_empty() && classes.iter().all(|&c| c == 9));
}

#[test]
fn config_file_and_manifest_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.toml");
    std::fs::write(&cfg, "timesteps = 10\ncodebooks = 2\n").unwrap();
    let first = tmp.path().join("first");
    let o = interleave(&first, &["patterns", "bench", "--config", cfg.to_str().unwrap(), "-K", "4"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("flatten,40,40"), "{}", stdout(&o));
    let replay = tmp.path().join("replay");
    let m = first.join("manifest.json");
    let again = interleave(&replay, &["patterns", "bench", "--config", m.to_str().unwrap()]);
    assert_eq!(stdout(&again), stdout(&o));

    std::fs::write(&cfg, "timestep = 10\n").unwrap();
    let bad = interleave(&tmp.path().join("bad"), &["patterns", "bench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn short_training_then_seeded_generation_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("train");
    let o = interleave(
        &train,
        &["train", "--steps", "5", "-T", "6", "-K", "2", "-M", "8", "--dim", "8", "--heads", "2", "--layers", "1"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let loss = std::fs::read_to_string(train.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 6);
    assert!(loss.starts_with("step,lr,loss,accuracy"));
    let ck = train.join("checkpoint.json");
    let ck = ck.to_str().unwrap();
    let gen = |name: &str| {
        let dir = tmp.path().join(name);
        assert!(interleave(&dir, &["generate", "--checkpoint", ck, "-T", "6", "--seed", "7"]).status.success());
        std::fs::read(dir.join("tokens.csv")).unwrap()
    };
    assert_eq!(gen("g1"), gen("g2"));
    let mem = interleave(
        &tmp.path().join("mem"),
        &["memorize", "--checkpoint", ck, "--prompt-lens", "1,3", "--gen-len", "3"],
    );
    assert!(mem.status.success(), "{}", String::from_utf8_lossy(&mem.stderr));
    assert!(stdout(&mem).starts_with("prompt_len,exact_match_fraction"));
    let rejected = interleave(&tmp.path().join("x"), &["generate", "--checkpoint", ck, "--text", "piano"]);
    assert_eq!(rejected.status.code(), Some(2));
}
