//! Drive an OpenAI-compatible endpoint with caching, retries, and bounded
//! concurrency — here against the built-in deterministic mock server.
//!
//! ```bash
//! cargo run -p brevibench --example generation_with_cache
//! ```

use std::sync::Arc;

use brevibench::corpus::{Corpus, Provenance, QueryRecord, Split};
use brevibench::llmclient::{run_batch, EndpointConfig, GenParams, ResponseCache};
use brevibench::mockserver::{MockBehavior, MockOptions, MockServer};
use brevibench::promptengine::{PromptDeps, Strategy, StrategyKind};
use brevibench::tokenize::Scheme;

fn main() -> anyhow::Result<()> {
    let server = MockServer::start(
        MockBehavior::FromPrompt(Arc::new(|prompt: &str| {
            format!("a reply derived from {} prompt bytes", prompt.len())
        })),
        MockOptions {
            latency: std::time::Duration::from_millis(25),
            ..MockOptions::default()
        },
    )?;

    let corpus = Corpus {
        records: (0..8)
            .map(|i| QueryRecord {
                id: format!("q{i}"),
                dataset: "toy".into(),
                split: Split::Test,
                context: None,
                question: format!("what is object {i}?"),
                target_answer: format!("object {i} described"),
                target_length: Some(3),
                extra_answers: Vec::new(),
            })
            .collect(),
        provenance: Provenance::default(),
    };

    let dir = tempfile::tempdir()?;
    let cache = ResponseCache::open(&dir.path().join("cache.jsonl"))?;
    let mut endpoint = EndpointConfig::new(server.url(), "mock-model");
    endpoint.parallelism = 4;

    let entries = run_batch(
        &corpus,
        &Strategy::plain(StrategyKind::Brief),
        &endpoint,
        &GenParams::default(),
        &PromptDeps::default(),
        &cache,
        Scheme::UnicodeWords,
    )?;
    println!(
        "first batch: {} entries, {} HTTP requests, max in-flight {}",
        entries.len(),
        server.request_count(),
        server.max_in_flight()
    );
    let sample = entries[0].generation.as_ref().unwrap();
    println!(
        "  {} -> {:?} ({} tokens)",
        sample.id, sample.response_text, sample.response_tokens
    );

    // identical rerun: everything comes from the cache
    let rerun = run_batch(
        &corpus,
        &Strategy::plain(StrategyKind::Brief),
        &endpoint,
        &GenParams::default(),
        &PromptDeps::default(),
        &cache,
        Scheme::UnicodeWords,
    )?;
    let hits = rerun
        .iter()
        .filter(|e| e.generation.as_ref().is_some_and(|g| g.cache_hit))
        .count();
    println!(
        "second batch: {hits}/{} cache hits, still {} HTTP requests total",
        rerun.len(),
        server.request_count()
    );
    Ok(())
}
