//! Per-sample quality and length metrics.
//!
//! ROUGE-L runs over lowercased `UnicodeWords` tokens with no stemming;
//! precision is LCS/|candidate|, recall LCS/|reference|, F1 the plain
//! harmonic mean. Length ratios compare generated to target token counts
//! under the run's measurement scheme, with target 0 flagged undefined
//! rather than averaged. The reasoning fraction measures how much of a
//! response sits inside thinking delimiters such as `<think>…</think>`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::llmclient::RunEntry;
use crate::tokenize::{count_tokens, tokenize_normalized, Scheme};

/// ROUGE-L precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Longest common subsequence length (two-row dynamic program).
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L of a candidate against a reference.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let cand = tokenize_normalized(candidate, Scheme::UnicodeWords).tokens;
    let refr = tokenize_normalized(reference, Scheme::UnicodeWords).tokens;
    let lcs = lcs_len(&cand, &refr) as f64;
    let precision = if cand.is_empty() {
        0.0
    } else {
        lcs / cand.len() as f64
    };
    let recall = if refr.is_empty() {
        0.0
    } else {
        lcs / refr.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

/// Generated/target length ratio; `None` (excluded from averages) when the
/// target length is not positive.
pub fn length_ratio(generated: f64, target: f64) -> Option<f64> {
    if target > 0.0 {
        Some(generated / target)
    } else {
        None
    }
}

/// Fraction of tokens strictly inside well-paired delimiter spans, over all
/// tokens excluding the delimiters themselves. An unmatched open delimiter
/// extends to the end of the text. Returns 0 when no tokens remain.
pub fn reasoning_fraction(text: &str, open_delim: &str, close_delim: &str) -> f64 {
    assert!(
        !open_delim.is_empty() && !close_delim.is_empty() && open_delim != close_delim,
        "delimiters must be non-empty and distinct"
    );
    let count = |s: &str| count_tokens(s, Scheme::UnicodeWords);
    let mut inside = 0usize;
    let mut outside = 0usize;
    let mut rest = text;
    loop {
        match rest.find(open_delim) {
            None => {
                outside += count(rest);
                break;
            }
            Some(i) => {
                outside += count(&rest[..i]);
                let after_open = &rest[i + open_delim.len()..];
                match after_open.find(close_delim) {
                    None => {
                        inside += count(after_open);
                        break;
                    }
                    Some(j) => {
                        inside += count(&after_open[..j]);
                        rest = &after_open[j + close_delim.len()..];
                    }
                }
            }
        }
    }
    let total = inside + outside;
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

/// Per-sample metrics for one successful generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub id: String,
    pub model: String,
    pub dataset: String,
    pub strategy: String,
    pub rouge: RougeScore,
    pub generated_length: usize,
    pub target_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_mwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_fraction: Option<f64>,
}

/// Scorecards plus the number of failed generations left out.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub cards: Vec<ScoreCard>,
    pub excluded: usize,
}

/// Delimiters used for the reasoning fraction.
#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub reasoning_open: String,
    pub reasoning_close: String,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            reasoning_open: "<think>".into(),
            reasoning_close: "</think>".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run entry references unknown record id '{0}'")]
    UnknownRecordId(String),
    #[error("score file line {line}: {reason}")]
    ScoreFileFormat { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Join a run with its corpus (and optionally per-record energy) into
/// scorecards. Failed generations are excluded and counted.
pub fn score_run(
    entries: &[RunEntry],
    corpus: &Corpus,
    energy: Option<&BTreeMap<String, f64>>,
    options: &ScoreOptions,
) -> Result<ScoredRun, MetricsError> {
    let by_id = corpus.id_index();
    let mut cards = Vec::with_capacity(entries.len());
    let mut excluded = 0usize;
    for entry in entries {
        let record = by_id
            .get(entry.id.as_str())
            .map(|&i| &corpus.records[i])
            .ok_or_else(|| MetricsError::UnknownRecordId(entry.id.clone()))?;
        let Some(generation) = &entry.generation else {
            excluded += 1;
            continue;
        };
        let target_length = count_tokens(&record.target_answer, generation.scheme);
        cards.push(ScoreCard {
            id: entry.id.clone(),
            model: generation.model.clone(),
            dataset: record.dataset.clone(),
            strategy: entry.strategy.clone(),
            rouge: rouge_l(&generation.response_text, &record.target_answer),
            generated_length: generation.response_tokens,
            target_length,
            length_ratio: length_ratio(generation.response_tokens as f64, target_length as f64),
            energy_mwh: energy.and_then(|m| m.get(&entry.id).copied()),
            reasoning_fraction: Some(reasoning_fraction(
                &generation.response_text,
                &options.reasoning_open,
                &options.reasoning_close,
            )),
        });
    }
    Ok(ScoredRun { cards, excluded })
}

pub fn write_scores(cards: &[ScoreCard], path: &Path) -> Result<(), MetricsError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for card in cards {
        writeln!(
            out,
            "{}",
            serde_json::to_string(card).expect("card serializes")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreCard>, MetricsError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut cards = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let card = serde_json::from_str(&line).map_err(|e| MetricsError::ScoreFileFormat {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        cards.push(card);
    }
    Ok(cards)
}
