//! ROUGE-L, length ratios, and reasoning fractions on individual samples.
//!
//! ```bash
//! cargo run -p brevibench --example score_responses
//! ```

use brevibench::metrics::{length_ratio, reasoning_fraction, rouge_l};

fn main() {
    let target = "Paris";
    for candidate in [
        "Paris",
        "Paris is the capital of France.",
        "The capital of France is Paris. It is a center of art and culture. \
         Let me know if you need anything else!",
    ] {
        let score = rouge_l(candidate, target);
        println!(
            "P {:.3}  R {:.3}  F1 {:.3}  <- {candidate:?}",
            score.precision, score.recall, score.f1
        );
    }
    println!("(shorter candidates keep recall and gain precision)\n");

    let ratio = length_ratio(152.3, 68.3).unwrap();
    println!("a model generating 152.3 tokens for 68.3-token targets runs at {ratio:.2}x");
    println!(
        "undefined ratio for empty targets: {:?}\n",
        length_ratio(5.0, 0.0)
    );

    let reasoning = "<think> first consider the units then divide by one hundred </think> 0.29 m";
    let fraction = reasoning_fraction(reasoning, "<think>", "</think>");
    println!("reasoning response: {reasoning:?}");
    println!("fraction of tokens spent thinking: {fraction:.3}");
}
