//! Build a BM25+ index over a toy pool, rank neighbors, and estimate a
//! response length from their median.
//!
//! ```bash
//! cargo run -p brevibench --example bm25_retrieval
//! ```

use brevibench::corpus::{Corpus, Provenance, QueryRecord, Split};
use brevibench::retrieval::{build_index, median_target_length, top_k, Bm25Params};

fn record(id: &str, question: &str, answer: &str) -> QueryRecord {
    QueryRecord {
        id: id.into(),
        dataset: "toy".into(),
        split: Split::Train,
        context: None,
        question: question.into(),
        target_answer: answer.into(),
        target_length: Some(answer.split_whitespace().count() as u32),
        extra_answers: Vec::new(),
    }
}

fn main() -> anyhow::Result<()> {
    let pool = Corpus {
        records: vec![
            record("p0", "what is the capital of france", "Paris"),
            record("p1", "what is the capital of spain", "Madrid"),
            record(
                "p2",
                "how do i convert cm to meters",
                "divide the centimeter value by 100",
            ),
            record("p3", "how many centimeters in a meter", "100"),
            record("p4", "who wrote the stranger", "Albert Camus"),
        ],
        provenance: Provenance::default(),
    };
    let index = build_index(&pool, Bm25Params::default())?;
    println!("indexed {} docs, avgdl {:.2}", index.n_docs, index.avgdl);

    let query = "29 cm is equal to how many meters?";
    println!("\nquery: {query}");
    for (rank, (id, score)) in top_k(&index, query, 3)?.iter().enumerate() {
        let question = &pool.find(id).unwrap().question;
        println!("  {}. {id} ({score:.4}) {question}", rank + 1);
    }

    let x = median_target_length(&index, &pool, query, 3)?;
    println!("\nmedian neighbor answer length: {x} words");
    println!("directive would read: \"Answer within {x} words.\"");
    Ok(())
}
