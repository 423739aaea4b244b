//! Ingest a raw QA dump into the canonical corpus format, draw a
//! deterministic evaluation sample, and pool training records.
//!
//! ```bash
//! cargo run -p brevibench --example ingest_and_sample
//! ```

use brevibench::corpus::{build_train_pool, load_corpus_with, write_corpus, Split};
use brevibench::tokenize::fill_target_lengths;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;

    // a raw dump using dolly-style field names; ingest normalizes them
    let raw = dir.path().join("raw.jsonl");
    let mut lines = String::new();
    for i in 0..40 {
        lines.push_str(&format!(
            "{{\"instruction\":\"what is fact number {i}?\",\"response\":\"fact {i} has a short answer\"}}\n"
        ));
    }
    std::fs::write(&raw, lines)?;

    let mut eval = load_corpus_with(&raw, "dolly", Split::Test)?;
    fill_target_lengths(&mut eval);
    let canonical = dir.path().join("dolly.corpus.jsonl");
    write_corpus(&eval, &canonical)?;
    println!("ingested {} records -> {}", eval.len(), canonical.display());
    println!("first record: {:?}\n", eval.records[0]);

    // deterministic sampling: same seed, same sample
    let sample_a = eval.sample_split(Split::Test, 5, 7, true)?;
    let sample_b = eval.sample_split(Split::Test, 5, 7, true)?;
    assert_eq!(sample_a.records, sample_b.records);
    let ids: Vec<&str> = sample_a.records.iter().map(|r| r.id.as_str()).collect();
    println!("seed 7 sample of 5: {ids:?}");

    // pooled training set with namespaced ids
    let mut train = load_corpus_with(&raw, "dolly", Split::Train)?;
    fill_target_lengths(&mut train);
    let mut gooaq = train.clone();
    for record in &mut gooaq.records {
        record.dataset = "gooaq".into();
    }
    let pool = build_train_pool(&[train, gooaq], 10, 7, true)?;
    println!(
        "pooled {} records; sample ids: {:?}",
        pool.len(),
        pool.records[..2]
            .iter()
            .map(|r| r.id.as_str())
            .collect::<Vec<_>>()
    );
    Ok(())
}
