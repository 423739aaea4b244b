//! Print the exact prompt every strategy produces for one record.
//!
//! ```bash
//! cargo run -p brevibench --example prompt_strategies
//! ```

use brevibench::corpus::{Corpus, Provenance, QueryRecord, Split};
use brevibench::lengthmodel::{train, LengthPredictor};
use brevibench::promptengine::{build_prompt, PromptDeps, Strategy};
use brevibench::retrieval::{build_index, Bm25Params};
use brevibench::tokenize::fill_target_lengths;

fn main() -> anyhow::Result<()> {
    // a pool for the retrieval-based strategies and the length predictor
    let mut pool = Corpus {
        records: (0..30)
            .map(|i| QueryRecord {
                id: format!("p{i}"),
                dataset: "toy".into(),
                split: Split::Train,
                context: None,
                question: format!("how many units are in measurement {i}?"),
                target_answer: format!("exactly {i} units of measure"),
                target_length: None,
                extra_answers: Vec::new(),
            })
            .collect(),
        provenance: Provenance::default(),
    };
    fill_target_lengths(&mut pool);
    let index = build_index(&pool, Bm25Params::default())?;
    let model = LengthPredictor::Builtin(train(&pool, 1.0)?);

    let record = QueryRecord {
        id: "q".into(),
        dataset: "toy".into(),
        split: Split::Test,
        context: None,
        question: "29 cm is equal to how many m?".into(),
        target_answer: "0.29 m".into(),
        target_length: Some(2),
        extra_answers: Vec::new(),
    };

    let deps = PromptDeps {
        index: Some(&index),
        pool: Some(&pool),
        predictor: Some(&model),
    };
    for mut strategy in Strategy::all() {
        strategy.incontext_examples = 2; // keep the demo short
        let spec = build_prompt(&record, &strategy, &deps)?;
        println!("================ {} ================", strategy.label());
        if let Some(x) = spec.resolved_limit {
            println!("(resolved word limit X = {x})");
        }
        println!("{}\n", spec.prompt_text);
    }
    Ok(())
}
