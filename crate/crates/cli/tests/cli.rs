//! Binary-level tests: subcommands, flags and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn evidex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evidex"))
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/config_offline.toml")
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(&path, content).unwrap();
    path
}

fn minimal_config_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "corpus.jsonl",
        r#"{"post_id":"p1","user_id":"u1","timestamp":1,"text":"the pain is here","label":"low"}"#,
    );
    write(dir.path(), "lexicon.csv", "pain,moderate\n");
    write(
        dir.path(),
        "mocks/extraction.jsonl",
        r#"{"match":"template:extraction","response":"1. the pain is here"}"#,
    );
    write(
        dir.path(),
        "mocks/summarizer.jsonl",
        r#"{"match":"template:summarization","response":"A short evidence summary."}"#,
    );
    write(
        dir.path(),
        "mocks/evaluator.jsonl",
        r#"{"match":"template:evaluator","response":"The score is [7]"}"#,
    );
    write(
        dir.path(),
        "run.toml",
        r#"seed = 5

[paths]
corpus = "corpus.jsonl"
lexicon = "lexicon.csv"
output = "out"

[roles]
extraction = "extractor"
summarizers = ["solar"]
evaluator = "judge"

[backends.extractor]
kind = "mock"
script = "mocks/extraction.jsonl"

[backends.solar]
kind = "mock"
script = "mocks/summarizer.jsonl"

[backends.judge]
kind = "mock"
script = "mocks/evaluator.jsonl"
"#,
    );
    dir
}

#[test]
fn validate_accepts_shipped_fixture_config() {
    let output = evidex()
        .args(["validate", "--config"])
        .arg(shipped_config())
        .arg("--offline")
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stdout).contains("configuration valid"));
}

#[test]
fn validate_missing_lexicon_exits_2_naming_the_field() {
    let dir = minimal_config_dir();
    std::fs::remove_file(dir.path().join("lexicon.csv")).unwrap();
    let output = evidex()
        .args(["validate", "--config"])
        .arg(dir.path().join("run.toml"))
        .arg("--skip-health")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("CFG_FILE_MISSING"));
    assert!(stderr.contains("paths.lexicon"));
}

#[test]
fn validate_rejects_zero_k() {
    let dir = minimal_config_dir();
    let config_path = dir.path().join("run.toml");
    let content = std::fs::read_to_string(&config_path).unwrap();
    std::fs::write(&config_path, format!("k_candidates = 0\n{content}")).unwrap();
    let output = evidex()
        .args(["validate", "--config"])
        .arg(&config_path)
        .arg("--skip-health")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("CFG_K_INVALID"));
}

#[test]
fn full_flow_highlight_summarize_report() {
    let dir = minimal_config_dir();
    let config_path = dir.path().join("run.toml");
    let out = dir.path().join("custom-out");

    let highlight = evidex()
        .args(["highlight", "--offline", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(highlight.status.success(), "{}", String::from_utf8_lossy(&highlight.stderr));
    assert!(out.join("highlights.jsonl").exists());
    assert!(out.join("submission_highlights.json").exists());
    assert!(out.join("manifest_highlight.json").exists());

    let summarize = evidex()
        .args(["summarize", "--offline", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(summarize.status.success(), "{}", String::from_utf8_lossy(&summarize.stderr));
    assert!(out.join("selections.jsonl").exists());
    assert!(out.join("winner_tally.txt").exists());
    let stdout = String::from_utf8_lossy(&summarize.stdout);
    assert!(stdout.contains("selected summaries for 1/1 users"));

    let report = evidex()
        .args(["report", "--offline", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    assert!(out.join("report.txt").exists());
    assert!(String::from_utf8_lossy(&report.stdout).contains("winner tally"));
}

#[test]
fn summarize_without_highlights_exits_2() {
    let dir = minimal_config_dir();
    let output = evidex()
        .args(["summarize", "--offline", "--config"])
        .arg(dir.path().join("run.toml"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("highlights.jsonl"));
}

#[test]
fn extraction_failures_above_threshold_exit_4() {
    let dir = minimal_config_dir();
    // An extraction script whose only rule never matches: every post fails.
    write(
        dir.path(),
        "mocks/extraction.jsonl",
        r#"{"match":"contains:token-that-never-appears","response":"x"}"#,
    );
    let output = evidex()
        .args(["highlight", "--offline", "--config"])
        .arg(dir.path().join("run.toml"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&output.stderr).contains("failure rate"));
}

#[test]
fn corrupt_mock_script_exits_3() {
    let dir = minimal_config_dir();
    write(dir.path(), "mocks/evaluator.jsonl", "this is not json\n");
    let output = evidex()
        .args(["highlight", "--offline", "--config"])
        .arg(dir.path().join("run.toml"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn offline_flag_rejects_http_backends() {
    let dir = minimal_config_dir();
    let config_path = dir.path().join("run.toml");
    let content = std::fs::read_to_string(&config_path).unwrap().replace(
        "[backends.judge]\nkind = \"mock\"\nscript = \"mocks/evaluator.jsonl\"",
        "[backends.judge]\nkind = \"http\"\nbase_url = \"http://example.invalid\"\nmodel = \"m\"",
    );
    std::fs::write(&config_path, content).unwrap();
    let output = evidex()
        .args(["highlight", "--offline", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("CFG_OFFLINE_HTTP"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = minimal_config_dir();
    let config_path = dir.path().join("run.toml");
    for out_name in ["out-a", "out-b"] {
        let out = dir.path().join(out_name);
        for cmd in [&["highlight"][..], &["summarize"][..]] {
            let status = evidex()
                .args(cmd)
                .args(["--offline", "--config"])
                .arg(&config_path)
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            assert!(status.success());
        }
    }
    for name in ["highlights.jsonl", "selections.jsonl", "submission_summaries.json"] {
        let a = std::fs::read(dir.path().join("out-a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("out-b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}
