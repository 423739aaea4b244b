//! Aggregate scorecards into summary tables and strategy-vs-default
//! reduction reports.
//!
//! ```bash
//! cargo run -p brevibench --example report_tables
//! ```

use brevibench::metrics::{RougeScore, ScoreCard};
use brevibench::report::{
    aggregate, reduction_vs_default, render, render_reductions, Dimension, Format,
};

fn card(strategy: &str, generated: usize, energy: f64, f1: f64) -> ScoreCard {
    ScoreCard {
        id: format!("{strategy}-{generated}"),
        model: "gemma-2-9b".into(),
        dataset: "dolly".into(),
        strategy: strategy.into(),
        rouge: RougeScore {
            precision: f1,
            recall: f1,
            f1,
        },
        generated_length: generated,
        target_length: 68,
        length_ratio: Some(generated as f64 / 68.0),
        energy_mwh: Some(energy),
        reasoning_fraction: None,
    }
}

fn main() -> anyhow::Result<()> {
    // a default run and two compression strategies over the same samples
    let mut cards = Vec::new();
    for i in 0..10 {
        cards.push(card("default", 150 + i, 10.0 + i as f64 / 10.0, 0.30));
        cards.push(card("minans", 60 + i, 7.2 + i as f64 / 10.0, 0.42));
        cards.push(card("brief", 95 + i, 8.1 + i as f64 / 10.0, 0.38));
    }

    let rows = aggregate(
        &cards,
        &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
    );
    println!("{}", render(&rows, Format::MarkdownTable)?);

    let reductions = reduction_vs_default(&rows)?;
    println!("{}", render_reductions(&reductions, Format::MarkdownTable)?);

    println!("same tables as CSV for plotting:");
    println!("{}", render(&rows, Format::Csv)?);
    Ok(())
}
