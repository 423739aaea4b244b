//! Train the built-in length predictor on a synthetic pool, evaluate it,
//! and show the external-predictor HTTP hook.
//!
//! ```bash
//! cargo run -p brevibench --example length_predictor
//! ```

use std::sync::Arc;

use brevibench::corpus::{Corpus, Provenance, QueryRecord, Split};
use brevibench::lengthmodel::{evaluate, train, ExternalPredictor, LengthPredictor};
use brevibench::mockserver::{MockBehavior, MockOptions, MockServer};

fn main() -> anyhow::Result<()> {
    // synthetic rule: ideal answer length = 2 × question words
    let pool = Corpus {
        records: (0..200)
            .map(|i| {
                let words = 3 + i % 15;
                let mut q: Vec<String> = (0..words).map(|w| format!("w{w}")).collect();
                q[0] = "what".into();
                QueryRecord {
                    id: format!("s{i}"),
                    dataset: "toy".into(),
                    split: Split::Train,
                    context: None,
                    question: q.join(" "),
                    target_answer: String::new(),
                    target_length: Some(2 * words as u32),
                    extra_answers: Vec::new(),
                }
            })
            .collect(),
        provenance: Provenance::default(),
    };

    let model = train(&pool, 1e-6)?;
    let stats = evaluate(&model, &pool)?;
    println!(
        "trained on {} records: MAE {:.3}, R² {:.4}",
        stats.n, stats.mae, stats.r2
    );

    let ten_word = QueryRecord {
        id: "q".into(),
        dataset: "toy".into(),
        split: Split::Test,
        context: None,
        question: "what w1 w2 w3 w4 w5 w6 w7 w8 w9".into(),
        target_answer: String::new(),
        target_length: None,
        extra_answers: Vec::new(),
    };
    let builtin = LengthPredictor::Builtin(model);
    println!(
        "10-word question -> predicted length {}",
        builtin.predict(&ten_word)?
    );

    // the same role can be filled by any HTTP endpoint answering
    // {"question", "context"} with {"length": <real>}
    let server = MockServer::start(
        MockBehavior::Raw(Arc::new(|_req| (200, r#"{"length": 12.4}"#.to_string()))),
        MockOptions::default(),
    )?;
    let external =
        LengthPredictor::External(ExternalPredictor::new(format!("{}/predict", server.url())));
    println!(
        "external predictor replied -> {}",
        external.predict(&ten_word)?
    );
    Ok(())
}
