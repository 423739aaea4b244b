//! The whole harness end to end: corpus → prompts → generation (mock
//! endpoint) → energy sampling → scoring → report, from one run config.
//!
//! ```bash
//! cargo run -p brevibench --example full_pipeline
//! ```

use std::sync::Arc;

use brevibench::energymeter::SourceConfig;
use brevibench::llmclient::EndpointConfig;
use brevibench::mockserver::{MockBehavior, MockOptions, MockServer};
use brevibench::pipeline::{pipeline, EnergyConfig, RunConfig};
use brevibench::tokenize::Scheme;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;

    // ten QA records in the canonical corpus format
    let corpus_path = dir.path().join("corpus.jsonl");
    let mut lines = String::new();
    for i in 0..10 {
        lines.push_str(&format!(
            "{{\"id\":\"q{i}\",\"dataset\":\"demo\",\"split\":\"test\",\"question\":\"what is demo item {i}?\",\"target_answer\":\"item {i} in a few words\"}}\n"
        ));
    }
    std::fs::write(&corpus_path, lines)?;

    // a deterministic endpoint standing in for a real model server
    let server = MockServer::start(
        MockBehavior::FromPrompt(Arc::new(|prompt: &str| {
            format!(
                "a deterministic answer derived from {} prompt bytes",
                prompt.len()
            )
        })),
        MockOptions {
            latency: std::time::Duration::from_millis(30),
            ..MockOptions::default()
        },
    )?;

    let mut endpoint = EndpointConfig::new(server.url(), "mock-model");
    endpoint.parallelism = 3;
    let config = RunConfig {
        corpus: corpus_path,
        dataset_label: "demo".into(),
        output_dir: dir.path().join("out"),
        strategy: "minans".into(),
        seed: 7,
        train_pool: None,
        index: None,
        length_model: None,
        external_predictor: None,
        scheme: Scheme::UnicodeWords,
        endpoint,
        generation: None,
        energy: EnergyConfig {
            interval_secs: 0.05,
            sources: vec![SourceConfig::Mock { watts: 100.0 }],
        },
    };

    let outcome = pipeline(&config)?;
    println!(
        "pipeline finished: {} records, {} failed, {:.3} mWh total\n",
        outcome.n_records,
        outcome.n_failed,
        outcome.total_mwh.unwrap_or(0.0)
    );
    println!("artifacts under {}:", outcome.output_dir.display());
    for path in [
        &outcome.run_file,
        &outcome.scores_file,
        &outcome.report_md,
        &outcome.report_csv,
        &outcome.manifest_file,
    ] {
        println!("  {}", path.file_name().unwrap().to_string_lossy());
    }

    println!("\n{}", std::fs::read_to_string(&outcome.report_md)?);
    println!("rerunning is free: the response cache already holds every completion.");
    let again = pipeline(&config)?;
    println!(
        "second run: {} records, scores identical = {}",
        again.n_records,
        std::fs::read(&outcome.scores_file)? == std::fs::read(&again.scores_file)?
    );
    Ok(())
}
