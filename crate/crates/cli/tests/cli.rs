use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy64.jsonl")
}

fn comformer(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comformer"))
        .args(["--config", Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.conf").to_str().unwrap()])
        .args(["--set", &format!("corpus={}", fixture().display())])
        .args(["--set", &format!("out_dir={}", out.display())])
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&comformer(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&comformer(dir.path(), &["--set", "model.depth=3", "stats"])), 1);
    assert_eq!(code(&comformer(dir.path(), &["--set", "batch_size=0", "stats"])), 1);
    let help = Command::new(env!("CARGO_BIN_EXE_comformer")).arg("--help").output().unwrap();
    assert_eq!(code(&help), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = comformer(dir.path(), &["--set", &format!("corpus={}", missing.display()), "stats"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));
    assert_eq!(code(&comformer(dir.path(), &["train"])), 2);
}

#[test]
fn full_run_echoes_config_and_generates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for step in [&["train-bpe"][..], &["preprocess"], &["--set", "max_steps=6", "train"], &["evaluate"], &["sample"], &["stats"]] {
        let o = comformer(out, step);
        assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for echo in ["config.json", "checkpoint/config.json", "eval/config.json", "sample/config.json", "stats/config.json"] {
        let text = fs::read_to_string(out.join(echo)).unwrap();
        assert!(text.contains("\"bpe_vocab_size\": 1000"), "{echo}");
    }
    assert_eq!(fs::read_to_string(out.join("train.log")).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 6);
    let stats = fs::read_to_string(out.join("stats/stats.txt")).unwrap();
    assert!(stats.contains("64"));
    let sample = fs::read_to_string(out.join("sample/human_study.tsv")).unwrap();
    assert_eq!(sample.lines().next(), Some("code\tgenerated_comment\treference_comment"));
    assert_eq!(sample.lines().count(), 9);

    let src = out.join("m.java");
    fs::write(&src, "public String getName() { return name; }").unwrap();
    let greedy = comformer(out, &["generate", "--beam", "1", src.to_str().unwrap()]);
    assert_eq!(code(&greedy), 0);
    let again = comformer(out, &["generate", "--beam", "1", src.to_str().unwrap()]);
    assert_eq!(greedy.stdout, again.stdout);

    fs::write(&src, "public String getName() { return name }").unwrap();
    let bad = comformer(out, &["generate", src.to_str().unwrap()]);
    assert_eq!(code(&bad), 2);
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("ParseError") && msg.contains("found }"), "{msg}");
}
