//! Drive an LLM to segment a response into labeled category spans, then
//! score the automatic annotation against a gold one.
//!
//! The "LLM" here is the built-in mock server replying with a fixed
//! segmentation; point `EndpointCompleter` at a real endpoint for actual
//! auto-annotation.
//!
//! ```bash
//! cargo run -p brevibench --example auto_categorize
//! ```

use std::sync::Arc;

use brevibench::categories::{auto_categorize, token_f1, Category, CategorySpan};
use brevibench::llmclient::{EndpointCompleter, EndpointConfig, GenParams, ResponseCache};
use brevibench::mockserver::{completion_body, MockBehavior, MockOptions, MockServer};
use brevibench::tokenize::{count_tokens, Scheme};

fn main() -> anyhow::Result<()> {
    let question = "What is the capital of France?";
    let response = "Paris. It is a center of art and culture. Hope that helps!";

    // canned segmentation reply, exactly what a cooperative model would say
    let reply = "MINANS: Paris.\n\
                 ADDINFO: It is a center of art and culture.\n\
                 CONVERSE: Hope that helps!";
    let server = MockServer::start(
        MockBehavior::Raw(Arc::new(move |_req| (200, completion_body(reply)))),
        MockOptions::default(),
    )?;

    let dir = tempfile::tempdir()?;
    let cache = ResponseCache::open(&dir.path().join("cache.jsonl"))?;
    let cfg = EndpointConfig::new(server.url(), "mock-annotator");
    let params = GenParams::default();
    let completer = EndpointCompleter {
        cfg: &cfg,
        params: &params,
        cache: &cache,
    };

    let result = auto_categorize(&completer, response, question)?;
    println!("model reply:\n{}\n", result.reply);
    println!("aligned spans ({} fragment(s) dropped):", result.dropped);
    for span in &result.spans {
        println!(
            "  [{:>2}, {:>2}) {}",
            span.start,
            span.end,
            span.category.name()
        );
    }

    // compare against a gold annotation that reads the tail as IRREL
    let gold = vec![
        CategorySpan {
            start: 0,
            end: 2,
            category: Category::MinAns,
        },
        CategorySpan {
            start: 2,
            end: 11,
            category: Category::AddInfo,
        },
        CategorySpan {
            start: 11,
            end: 15,
            category: Category::Irrel,
        },
    ];
    let n_tokens = count_tokens(response, Scheme::UnicodeWords);
    let f1 = token_f1(&result.spans, &gold, n_tokens)?;
    println!("\ntoken F1 vs gold:");
    for (category, score) in &f1.per_category {
        println!("  {:<8} {score:.3}", category.name());
    }
    println!("  macro    {:.3}", f1.macro_f1);
    Ok(())
}
