//! The subcommand surface, exercised through the real binary.

use std::path::Path;
use std::process::{Command, Output};

use brevibench::mockserver::MockServer;

fn brevibench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brevibench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn path_str(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_raw_dolly_style(path: &Path, n: usize) {
    let mut lines = String::new();
    for i in 0..n {
        lines.push_str(&format!(
            "{{\"instruction\":\"what could go on top of item {i}?\",\"response\":\"topping {i} with a couple of words\"}}\n"
        ));
    }
    std::fs::write(path, lines).unwrap();
}

#[test]
fn ingest_index_prompt_run_score_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    write_raw_dolly_style(&raw, 25);

    // ingest the raw file twice: once as an eval corpus, once as a pool
    let corpus = dir.path().join("corpus.jsonl");
    let out = brevibench(&[
        "ingest",
        "--in",
        path_str(&raw),
        "--dataset",
        "dolly",
        "--out",
        path_str(&corpus),
        "--split",
        "test",
    ]);
    assert!(assert_ok(&out).contains("25 records"));

    let pool = dir.path().join("pool.jsonl");
    let out = brevibench(&[
        "ingest",
        "--in",
        path_str(&raw),
        "--dataset",
        "dolly",
        "--out",
        path_str(&pool),
        "--split",
        "train",
    ]);
    assert_ok(&out);

    // build and query the index
    let index = dir.path().join("pool.index.json");
    let out = brevibench(&[
        "index",
        "build",
        "--pool",
        path_str(&pool),
        "--out",
        path_str(&index),
    ]);
    assert!(assert_ok(&out).contains("indexed 25 documents"));
    let out = brevibench(&[
        "index",
        "query",
        "--index",
        path_str(&index),
        "--text",
        "what could go on top",
        "--k",
        "3",
    ]);
    let stdout = assert_ok(&out);
    assert_eq!(stdout.lines().count(), 3);

    // preview the exact prompt for one record
    let out = brevibench(&[
        "prompt",
        "preview",
        "--corpus",
        path_str(&corpus),
        "--record",
        "r000001",
        "--strategy",
        "brief",
    ]);
    let stdout = assert_ok(&out);
    assert!(
        stdout.contains("Answer briefly.\n### Response:"),
        "{stdout}"
    );

    // run a generation batch against a mock endpoint
    let server = MockServer::echo("a short reply").unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
corpus = "{corpus}"
output_dir = "{out_dir}"
strategy = "minans"

[endpoint]
base_url = "{url}"
model = "mock-model"
parallelism = 2
retry_backoff_ms = 1
"#,
            corpus = corpus.display(),
            out_dir = dir.path().join("out").display(),
            url = server.url(),
        ),
    )
    .unwrap();
    let out = brevibench(&["run", "--config", path_str(&config_path)]);
    assert!(assert_ok(&out).contains("ran 25 records (0 failed)"));
    let run_file = dir.path().join("out/run.jsonl");
    assert!(run_file.exists());

    // score the run with machine-readable output
    let scores = dir.path().join("scores.jsonl");
    let out = brevibench(&[
        "score",
        "--run",
        path_str(&run_file),
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&scores),
        "--json",
    ]);
    let stdout = assert_ok(&out);
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["scored"], 25);
    assert_eq!(summary["excluded"], 0);

    // aggregate into a markdown report
    let out = brevibench(&[
        "report",
        "--scores",
        path_str(&scores),
        "--group-by",
        "model,strategy",
        "--format",
        "markdown_table",
    ]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("| minans |"), "{stdout}");
}

#[test]
fn predict_length_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    // pool with target lengths exactly 2 + (i % 7): enough variety to fit
    let mut lines = String::new();
    for i in 0..60 {
        let words = 2 + (i % 7);
        let answer: Vec<String> = (0..words).map(|w| format!("w{w}")).collect();
        lines.push_str(&format!(
            "{{\"id\":\"p{i}\",\"dataset\":\"toy\",\"split\":\"train\",\"question\":\"how long is item {i}?\",\"target_answer\":\"{}\"}}\n",
            answer.join(" ")
        ));
    }
    let pool = dir.path().join("pool.jsonl");
    std::fs::write(&pool, lines).unwrap();

    let model = dir.path().join("length.model.json");
    let out = brevibench(&[
        "predict-length",
        "train",
        "--pool",
        path_str(&pool),
        "--out",
        path_str(&model),
        "--lambda",
        "0.1",
    ]);
    assert!(assert_ok(&out).contains("trained on 60 records"));
    let out = brevibench(&[
        "predict-length",
        "eval",
        "--model",
        path_str(&model),
        "--corpus",
        path_str(&pool),
    ]);
    assert!(assert_ok(&out).contains("n 60"));
}

#[test]
fn agreement_and_catdist_commands() {
    let dir = tempfile::tempdir().unwrap();
    let text = "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9";
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    std::fs::write(
        &a,
        format!("{{\"id\":\"dolly/q1\",\"model\":\"m\",\"response_text\":\"{text}\",\"spans\":[{{\"start\":0,\"end\":10,\"category\":\"MINANS\"}}]}}\n"),
    )
    .unwrap();
    std::fs::write(
        &b,
        format!("{{\"id\":\"dolly/q1\",\"model\":\"m\",\"response_text\":\"{text}\",\"spans\":[{{\"start\":0,\"end\":5,\"category\":\"MINANS\"}},{{\"start\":5,\"end\":10,\"category\":\"ADDINFO\"}}]}}\n"),
    )
    .unwrap();

    let out = brevibench(&["agreement", "--a", path_str(&a), "--b", path_str(&b)]);
    assert!(assert_ok(&out).contains("pairwise macro F: 0.333"));

    let out = brevibench(&[
        "catdist",
        "--annotations",
        path_str(&b),
        "--group-by",
        "dataset",
    ]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("dolly,MINANS,0.500"), "{stdout}");
    assert!(stdout.contains("dolly,ADDINFO,0.500"));
}

#[test]
fn pipeline_command_reports_config_problems() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
corpus = "{}/missing.jsonl"
output_dir = "{}/out"
strategy = "limit:predreslen"

[endpoint]
base_url = "http://127.0.0.1:9"
model = "m"
"#,
            dir.path().display(),
            dir.path().display(),
        ),
    )
    .unwrap();
    let out = brevibench(&["pipeline", "--config", path_str(&config_path)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("corpus"), "{stderr}");
    assert!(stderr.contains("length_model"), "{stderr}");
}
