use std::fs;
use std::path::Path;
use std::process::Command;

fn posbias() -> Command {
    Command::new(env!("CARGO_BIN_EXE_posbias"))
}

fn write_config(dir: &Path, providers: &str) -> std::path::PathBuf {
    let path = dir.join("run.json");
    fs::write(
        &path,
        format!(
            r#"{{"providers": {providers},
                "synthetic": [{{"docs": 10, "min_sentences": 6, "max_sentences": 14, "seed": 1}}],
                "output_dir": "out"}}"#
        ),
    )
    .unwrap();
    path
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "run_metadata.json")
        .map(|p| (p.display().to_string(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn ablate_insert_writes_one_line_per_cell_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#"["toy-decay"]"#);
    let run = || {
        posbias()
            .args(["--config", config.to_str().unwrap(), "--cache", tmp.path().join("cache").to_str().unwrap()])
            .args(["ablate", "--kind", "insert"])
            .status()
            .unwrap()
    };
    assert_eq!(run().code(), Some(0));
    let stage = tmp.path().join("out/ablate-insert");
    let raw = fs::read_to_string(stage.join("raw.jsonl")).unwrap();
    assert_eq!(raw.lines().count(), 150);
    let first: serde_json::Value = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
    assert!(first["cosine"].is_number());
    let before = snapshot(&stage);

    assert_eq!(run().code(), Some(0));
    assert_eq!(snapshot(&stage), before);
}

#[test]
fn out_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#"["toy-uniform"]"#);
    let out = tmp.path().join("elsewhere");
    let status = posbias()
        .args(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "decompose"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("decompose/summary.csv").exists());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn missing_api_key_fails_at_startup() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"[{"kind": "http-openai-shape", "name": "remote", "endpoint": "http://127.0.0.1:9/v1/embeddings",
             "model": "m", "context_tokens": 512, "api_key_env": "POSBIAS_TEST_UNSET_KEY"}]"#,
    );
    let output = posbias()
        .env_remove("POSBIAS_TEST_UNSET_KEY")
        .args(["--config", config.to_str().unwrap(), "ablate"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("POSBIAS_TEST_UNSET_KEY"));
    assert!(!tmp.path().join("out").exists());
}
