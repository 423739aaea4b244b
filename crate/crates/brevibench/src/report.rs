//! Aggregation of scorecards into summary tables.
//!
//! Columns are emitted in a fixed order: model, dataset, strategy,
//! n_samples, mean_target_length, mean_generated_length, mean_length_ratio,
//! mean_rouge_precision, mean_rouge_recall, mean_rouge_f1, mean_energy_mwh,
//! exclusions. Lengths print with 1 decimal, ratios/ROUGE/energy with 3,
//! reduction percentages with 1. Dimensions not grouped on render as "all".

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ScoreCard;

/// Aggregated metrics for one (model, dataset, strategy) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub dataset: String,
    pub strategy: String,
    pub n_samples: usize,
    pub mean_target_length: f64,
    pub mean_generated_length: f64,
    /// Mean over samples with a defined ratio; absent when none have one.
    pub mean_length_ratio: Option<f64>,
    pub mean_rouge_precision: f64,
    pub mean_rouge_recall: f64,
    pub mean_rouge_f1: f64,
    pub mean_energy_mwh: Option<f64>,
    /// Samples whose length ratio was undefined (target length 0).
    pub exclusion_count: usize,
}

/// Grouping dimensions for [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Model,
    Dataset,
    Strategy,
}

impl std::str::FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Dimension, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "model" => Ok(Dimension::Model),
            "dataset" => Ok(Dimension::Dataset),
            "strategy" => Ok(Dimension::Strategy),
            other => Err(format!(
                "unknown dimension \"{other}\" (model|dataset|strategy)"
            )),
        }
    }
}

/// Parse a comma-separated dimension list such as `model,dataset,strategy`.
pub fn parse_dimensions(s: &str) -> Result<Vec<Dimension>, String> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    EmptyReport,
    #[error("no default-strategy baseline for model '{model}' dataset '{dataset}'")]
    MissingBaseline { model: String, dataset: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Arithmetic means per group, in deterministic (lexicographic) row order.
/// Undefined length ratios are excluded from the ratio mean and counted.
pub fn aggregate(cards: &[ScoreCard], group_by: &[Dimension]) -> Vec<SummaryRow> {
    let key_of = |card: &ScoreCard| {
        let pick = |dim: Dimension, value: &str| {
            if group_by.contains(&dim) {
                value.to_string()
            } else {
                "all".to_string()
            }
        };
        (
            pick(Dimension::Model, &card.model),
            pick(Dimension::Dataset, &card.dataset),
            pick(Dimension::Strategy, &card.strategy),
        )
    };

    let mut groups: BTreeMap<(String, String, String), Vec<&ScoreCard>> = BTreeMap::new();
    for card in cards {
        groups.entry(key_of(card)).or_default().push(card);
    }

    groups
        .into_iter()
        .map(|((model, dataset, strategy), members)| {
            let n = members.len();
            let mean = |f: &dyn Fn(&ScoreCard) -> f64| {
                members.iter().map(|c| f(c)).sum::<f64>() / n as f64
            };
            let ratios: Vec<f64> = members.iter().filter_map(|c| c.length_ratio).collect();
            let energies: Vec<f64> = members.iter().filter_map(|c| c.energy_mwh).collect();
            SummaryRow {
                model,
                dataset,
                strategy,
                n_samples: n,
                mean_target_length: mean(&|c| c.target_length as f64),
                mean_generated_length: mean(&|c| c.generated_length as f64),
                mean_length_ratio: if ratios.is_empty() {
                    None
                } else {
                    Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
                },
                mean_rouge_precision: mean(&|c| c.rouge.precision),
                mean_rouge_recall: mean(&|c| c.rouge.recall),
                mean_rouge_f1: mean(&|c| c.rouge.f1),
                mean_energy_mwh: if energies.is_empty() {
                    None
                } else {
                    Some(energies.iter().sum::<f64>() / energies.len() as f64)
                },
                exclusion_count: n - ratios.len(),
            }
        })
        .collect()
}

/// Output format for rendered tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    MarkdownTable,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Format, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markdown_table" | "markdown" | "md" => Ok(Format::MarkdownTable),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format \"{other}\" (markdown_table|csv)")),
        }
    }
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "model",
    "dataset",
    "strategy",
    "n_samples",
    "mean_target_length",
    "mean_generated_length",
    "mean_length_ratio",
    "mean_rouge_precision",
    "mean_rouge_recall",
    "mean_rouge_f1",
    "mean_energy_mwh",
    "exclusions",
];

fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn summary_cells(row: &SummaryRow) -> Vec<String> {
    vec![
        row.model.clone(),
        row.dataset.clone(),
        row.strategy.clone(),
        row.n_samples.to_string(),
        format!("{:.1}", row.mean_target_length),
        format!("{:.1}", row.mean_generated_length),
        row.mean_length_ratio
            .map(|r| format!("{r:.3}"))
            .unwrap_or_default(),
        format!("{:.3}", row.mean_rouge_precision),
        format!("{:.3}", row.mean_rouge_recall),
        format!("{:.3}", row.mean_rouge_f1),
        row.mean_energy_mwh
            .map(|e| format!("{e:.3}"))
            .unwrap_or_default(),
        row.exclusion_count.to_string(),
    ]
}

fn render_table(header: &[&str], rows: Vec<Vec<String>>, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::new();
            out.push_str(&header.join(","));
            out.push('\n');
            for cells in rows {
                let quoted: Vec<String> = cells.iter().map(|c| csv_quote(c)).collect();
                out.push_str(&quoted.join(","));
                out.push('\n');
            }
            out
        }
        Format::MarkdownTable => {
            let mut out = String::new();
            out.push_str("| ");
            out.push_str(&header.join(" | "));
            out.push_str(" |\n|");
            for _ in header {
                out.push_str(" --- |");
            }
            out.push('\n');
            for cells in rows {
                out.push_str("| ");
                out.push_str(&cells.join(" | "));
                out.push_str(" |\n");
            }
            out
        }
    }
}

/// Render summary rows as a markdown table or RFC-style CSV.
pub fn render(rows: &[SummaryRow], format: Format) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    Ok(render_table(
        &SUMMARY_COLUMNS,
        rows.iter().map(summary_cells).collect(),
        format,
    ))
}

/// Percentage reductions of one strategy against the DEFAULT baseline of
/// the same (model, dataset) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub model: String,
    pub dataset: String,
    pub strategy: String,
    /// 100 · (1 − strategy_mean_length / default_mean_length)
    pub length_reduction_pct: f64,
    pub energy_reduction_pct: Option<f64>,
}

/// Length/energy reductions relative to the `default` strategy rows.
pub fn reduction_vs_default(rows: &[SummaryRow]) -> Result<Vec<Reduction>, ReportError> {
    let mut baselines: BTreeMap<(&str, &str), &SummaryRow> = BTreeMap::new();
    for row in rows {
        if row.strategy == "default" {
            baselines.insert((row.model.as_str(), row.dataset.as_str()), row);
        }
    }
    let mut reductions = Vec::new();
    for row in rows {
        if row.strategy == "default" {
            continue;
        }
        let baseline = baselines
            .get(&(row.model.as_str(), row.dataset.as_str()))
            .ok_or_else(|| ReportError::MissingBaseline {
                model: row.model.clone(),
                dataset: row.dataset.clone(),
            })?;
        let length_reduction_pct = if baseline.mean_generated_length > 0.0 {
            100.0 * (1.0 - row.mean_generated_length / baseline.mean_generated_length)
        } else {
            0.0
        };
        let energy_reduction_pct = match (row.mean_energy_mwh, baseline.mean_energy_mwh) {
            (Some(strategy_energy), Some(baseline_energy)) if baseline_energy > 0.0 => {
                Some(100.0 * (1.0 - strategy_energy / baseline_energy))
            }
            _ => None,
        };
        reductions.push(Reduction {
            model: row.model.clone(),
            dataset: row.dataset.clone(),
            strategy: row.strategy.clone(),
            length_reduction_pct,
            energy_reduction_pct,
        });
    }
    Ok(reductions)
}

pub const REDUCTION_COLUMNS: [&str; 5] = [
    "model",
    "dataset",
    "strategy",
    "length_reduction_pct",
    "energy_reduction_pct",
];

/// Render reductions with percentages at 1 decimal.
pub fn render_reductions(reductions: &[Reduction], format: Format) -> Result<String, ReportError> {
    if reductions.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    let rows = reductions
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.dataset.clone(),
                r.strategy.clone(),
                format!("{:.1}", r.length_reduction_pct),
                r.energy_reduction_pct
                    .map(|e| format!("{e:.1}"))
                    .unwrap_or_default(),
            ]
        })
        .collect();
    Ok(render_table(&REDUCTION_COLUMNS, rows, format))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RougeScore;

    fn card(
        model: &str,
        dataset: &str,
        strategy: &str,
        generated: usize,
        target: usize,
        energy: Option<f64>,
    ) -> ScoreCard {
        ScoreCard {
            id: format!("{model}-{dataset}-{strategy}-{generated}"),
            model: model.into(),
            dataset: dataset.into(),
            strategy: strategy.into(),
            rouge: RougeScore {
                precision: 0.5,
                recall: 0.4,
                f1: 0.444,
            },
            generated_length: generated,
            target_length: target,
            length_ratio: if target > 0 {
                Some(generated as f64 / target as f64)
            } else {
                None
            },
            energy_mwh: energy,
            reasoning_fraction: Some(0.0),
        }
    }

    #[test]
    fn single_card_row_echoes_values() {
        let cards = vec![card("m", "d", "brief", 10, 5, Some(2.0))];
        let rows = aggregate(
            &cards,
            &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
        );
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.n_samples, 1);
        assert_eq!(row.mean_generated_length, 10.0);
        assert_eq!(row.mean_target_length, 5.0);
        assert_eq!(row.mean_length_ratio, Some(2.0));
        assert_eq!(row.mean_energy_mwh, Some(2.0));
        assert_eq!(row.exclusion_count, 0);
    }

    #[test]
    fn undefined_ratios_are_excluded_and_counted() {
        let cards = vec![
            card("m", "d", "brief", 10, 0, None),
            card("m", "d", "brief", 20, 0, None),
        ];
        let rows = aggregate(&cards, &[Dimension::Strategy]);
        assert_eq!(rows[0].mean_length_ratio, None);
        assert_eq!(rows[0].exclusion_count, 2);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let mut cards = vec![
            card("m1", "d1", "brief", 10, 5, Some(1.0)),
            card("m1", "d2", "brief", 30, 5, Some(3.0)),
            card("m2", "d1", "default", 50, 10, None),
            card("m1", "d1", "brief", 14, 7, Some(2.0)),
        ];
        let forward = aggregate(&cards, &[Dimension::Model, Dimension::Strategy]);
        cards.reverse();
        let backward = aggregate(&cards, &[Dimension::Model, Dimension::Strategy]);
        assert_eq!(forward, backward);
        // ungrouped dimension renders as "all"
        assert!(forward.iter().all(|r| r.dataset == "all"));
    }

    #[test]
    fn rows_sort_lexicographically() {
        let cards = vec![
            card("zeta", "d", "default", 1, 1, None),
            card("alpha", "d", "default", 1, 1, None),
        ];
        let rows = aggregate(&cards, &[Dimension::Model]);
        assert_eq!(rows[0].model, "alpha");
        assert_eq!(rows[1].model, "zeta");
    }

    #[test]
    fn render_formats_lengths_with_one_decimal() {
        // ten samples averaging 152.3 generated / 68.3 target
        let mut cards: Vec<ScoreCard> = (0..9)
            .map(|_| card("g", "dolly", "default", 152, 68, None))
            .collect();
        cards.push(card("g", "dolly", "default", 155, 71, None));
        let rows = aggregate(
            &cards,
            &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
        );
        let text = render(&rows, Format::MarkdownTable).unwrap();
        assert!(text.contains("| 68.3 | 152.3 |"), "rendered:\n{text}");
        let csv = render(&rows, Format::Csv).unwrap();
        assert!(csv.lines().nth(1).unwrap().contains("68.3,152.3"));
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let mut c = card("model,with,commas", "d", "brief", 10, 5, None);
        c.model = "model,with,commas".into();
        let rows = aggregate(&[c], &[Dimension::Model]);
        let csv = render(&rows, Format::Csv).unwrap();
        assert!(csv.contains("\"model,with,commas\""));
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(
            render(&[], Format::Csv),
            Err(ReportError::EmptyReport)
        ));
    }

    #[test]
    fn csv_roundtrips_at_printed_precision() {
        let cards = vec![
            card("m", "dolly", "default", 100, 50, Some(10.0)),
            card("m", "dolly", "minans", 40, 50, Some(4.0)),
            card("m", "dolly", "minans", 44, 50, Some(4.4)),
        ];
        let rows = aggregate(
            &cards,
            &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
        );
        let csv = render(&rows, Format::Csv).unwrap();
        let parsed = parse_summary_csv(&csv);
        assert_eq!(parsed.len(), rows.len());
        for (row, back) in rows.iter().zip(&parsed) {
            assert_eq!(row.model, back.model);
            assert_eq!(row.strategy, back.strategy);
            assert_eq!(row.n_samples, back.n_samples);
            assert!((row.mean_generated_length - back.mean_generated_length).abs() <= 0.05);
            assert!((row.mean_rouge_f1 - back.mean_rouge_f1).abs() <= 0.0005);
            assert_eq!(
                row.mean_energy_mwh.is_some(),
                back.mean_energy_mwh.is_some()
            );
        }
    }

    /// Minimal RFC-style CSV reader used only to check render round-trips.
    fn parse_summary_csv(text: &str) -> Vec<SummaryRow> {
        let mut lines = text.lines();
        let _header = lines.next().unwrap();
        lines
            .map(|line| {
                let cells = split_csv_line(line);
                SummaryRow {
                    model: cells[0].clone(),
                    dataset: cells[1].clone(),
                    strategy: cells[2].clone(),
                    n_samples: cells[3].parse().unwrap(),
                    mean_target_length: cells[4].parse().unwrap(),
                    mean_generated_length: cells[5].parse().unwrap(),
                    mean_length_ratio: cells[6].parse().ok(),
                    mean_rouge_precision: cells[7].parse().unwrap(),
                    mean_rouge_recall: cells[8].parse().unwrap(),
                    mean_rouge_f1: cells[9].parse().unwrap(),
                    mean_energy_mwh: cells[10].parse().ok(),
                    exclusion_count: cells[11].parse().unwrap(),
                }
            })
            .collect()
    }

    fn split_csv_line(line: &str) -> Vec<String> {
        let mut cells = Vec::new();
        let mut cell = String::new();
        let mut in_quotes = false;
        let mut chars = line.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '"' if in_quotes && chars.peek() == Some(&'"') => {
                    cell.push('"');
                    chars.next();
                }
                '"' => in_quotes = !in_quotes,
                ',' if !in_quotes => cells.push(std::mem::take(&mut cell)),
                other => cell.push(other),
            }
        }
        cells.push(cell);
        cells
    }

    #[test]
    fn reduction_arithmetic() {
        let cards = vec![
            card("m", "d", "default", 100, 50, Some(10.0)),
            card("m", "d", "minans", 40, 50, Some(7.5)),
        ];
        let rows = aggregate(
            &cards,
            &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
        );
        let reductions = reduction_vs_default(&rows).unwrap();
        assert_eq!(reductions.len(), 1);
        assert!((reductions[0].length_reduction_pct - 60.0).abs() < 1e-9);
        assert!((reductions[0].energy_reduction_pct.unwrap() - 25.0).abs() < 1e-9);
        let text = render_reductions(&reductions, Format::Csv).unwrap();
        assert!(text.contains("60.0"), "{text}");
    }

    #[test]
    fn zero_reduction_when_equal_to_default() {
        let cards = vec![
            card("m", "d", "default", 100, 50, None),
            card("m", "d", "brief", 100, 50, None),
        ];
        let rows = aggregate(
            &cards,
            &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
        );
        let reductions = reduction_vs_default(&rows).unwrap();
        assert_eq!(reductions[0].length_reduction_pct, 0.0);
        assert_eq!(reductions[0].energy_reduction_pct, None);
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let cards = vec![card("m", "d", "minans", 40, 50, None)];
        let rows = aggregate(
            &cards,
            &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
        );
        assert!(matches!(
            reduction_vs_default(&rows),
            Err(ReportError::MissingBaseline { .. })
        ));
    }

    #[test]
    fn dimension_parsing() {
        assert_eq!(
            parse_dimensions("model,dataset,strategy").unwrap(),
            vec![Dimension::Model, Dimension::Dataset, Dimension::Strategy]
        );
        assert!(parse_dimensions("model,bogus").is_err());
    }
}
