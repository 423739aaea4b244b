//! The six-category information taxonomy for response content.
//!
//! Annotations label token spans of a response as minimal answer, helpful
//! additional information, reasoning, conversational filler, redundant
//! restatement, or irrelevant text. Offsets index the response's
//! `UnicodeWords` token list and spans may not overlap: every token gets at
//! most one label. This module computes category distributions,
//! inter-annotator agreement (token-level pairwise F, macro-averaged), and
//! can drive an LLM to produce annotations automatically.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llmclient::{ClientError, TextCompleter};
use crate::tokenize::{tokenize, Scheme};

/// The categorization prompt sent by [`auto_categorize`], with `{question}`
/// and `{response}` placeholders. Kept verbatim in the repo so automated
/// annotations are comparable across runs.
pub const CATEGORIZE_PROMPT: &str = include_str!("../docs/categorize_prompt.txt");

/// Information category of a response span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "MINANS")]
    MinAns,
    #[serde(rename = "ADDINFO")]
    AddInfo,
    #[serde(rename = "EXPLAIN")]
    Explain,
    #[serde(rename = "CONVERSE")]
    Converse,
    #[serde(rename = "REDINFO")]
    RedInfo,
    #[serde(rename = "IRREL")]
    Irrel,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::MinAns,
        Category::AddInfo,
        Category::Explain,
        Category::Converse,
        Category::RedInfo,
        Category::Irrel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::MinAns => "MINANS",
            Category::AddInfo => "ADDINFO",
            Category::Explain => "EXPLAIN",
            Category::Converse => "CONVERSE",
            Category::RedInfo => "REDINFO",
            Category::Irrel => "IRREL",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MINANS" => Some(Category::MinAns),
            "ADDINFO" => Some(Category::AddInfo),
            "EXPLAIN" => Some(Category::Explain),
            "CONVERSE" => Some(Category::Converse),
            "REDINFO" => Some(Category::RedInfo),
            "IRREL" => Some(Category::Irrel),
            _ => None,
        }
    }
}

/// A labeled token span; `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpan {
    pub start: usize,
    pub end: usize,
    pub category: Category,
}

/// One annotated response. Tokens outside all spans are unlabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedResponse {
    pub id: String,
    pub model: String,
    pub response_text: String,
    pub spans: Vec<CategorySpan>,
}

#[derive(Debug, Error)]
pub enum CategoryError {
    #[error("span [{start}, {end}) out of range for {n_tokens} tokens")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        n_tokens: usize,
    },
    #[error("spans overlap at token {at}")]
    OverlappingSpans { at: usize },
    #[error("annotator files do not cover the same responses: {0}")]
    MismatchedCoverage(String),
    #[error("model reply could not be parsed: {0}")]
    MalformedModelOutput(String),
    #[error(transparent)]
    Completion(#[from] ClientError),
    #[error("annotation file line {line}: {reason}")]
    FileFormat { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn token_count(text: &str) -> usize {
    tokenize(text, Scheme::UnicodeWords).len()
}

/// Check span bounds and non-overlap against a token count.
pub fn validate_spans(spans: &[CategorySpan], n_tokens: usize) -> Result<(), CategoryError> {
    let mut sorted: Vec<&CategorySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut covered_until = 0usize;
    for (i, span) in sorted.iter().enumerate() {
        if span.start >= span.end || span.end > n_tokens {
            return Err(CategoryError::SpanOutOfRange {
                start: span.start,
                end: span.end,
                n_tokens,
            });
        }
        if i > 0 && span.start < covered_until {
            return Err(CategoryError::OverlappingSpans { at: span.start });
        }
        covered_until = span.end;
    }
    Ok(())
}

impl AnnotatedResponse {
    pub fn validate(&self) -> Result<(), CategoryError> {
        validate_spans(&self.spans, token_count(&self.response_text))
    }

    /// Per-token labels (None = unlabeled).
    fn token_labels(&self) -> Vec<Option<Category>> {
        let n = token_count(&self.response_text);
        let mut labels = vec![None; n];
        for span in &self.spans {
            for label in labels.iter_mut().take(span.end.min(n)).skip(span.start) {
                *label = Some(span.category);
            }
        }
        labels
    }
}

/// Load one [`AnnotatedResponse`] per line, validating every record.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedResponse>, CategoryError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut annotations = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotatedResponse =
            serde_json::from_str(&line).map_err(|e| CategoryError::FileFormat {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        record.validate().map_err(|e| CategoryError::FileFormat {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        annotations.push(record);
    }
    Ok(annotations)
}

pub fn write_annotations(
    annotations: &[AnnotatedResponse],
    path: &Path,
) -> Result<(), CategoryError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in annotations {
        writeln!(
            out,
            "{}",
            serde_json::to_string(record).expect("annotation serializes")
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Grouping axis for [`distribution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Overall,
    Model,
    Dataset,
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<GroupBy, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "overall" => Ok(GroupBy::Overall),
            "model" => Ok(GroupBy::Model),
            "dataset" => Ok(GroupBy::Dataset),
            other => Err(format!(
                "unknown group-by \"{other}\" (overall|model|dataset)"
            )),
        }
    }
}

/// Dataset label derived from a namespaced record id (`dataset/raw-id`).
fn dataset_of(id: &str) -> &str {
    id.split_once('/').map(|(d, _)| d).unwrap_or("unknown")
}

/// Fraction of labeled tokens per category, per group. Fractions within a
/// group sum to 1 whenever the group has any labeled token.
pub fn distribution(
    annotations: &[AnnotatedResponse],
    group_by: GroupBy,
) -> BTreeMap<String, BTreeMap<Category, f64>> {
    let mut counts: BTreeMap<String, BTreeMap<Category, usize>> = BTreeMap::new();
    for annotation in annotations {
        let group = match group_by {
            GroupBy::Overall => "overall".to_string(),
            GroupBy::Model => annotation.model.clone(),
            GroupBy::Dataset => dataset_of(&annotation.id).to_string(),
        };
        let entry = counts.entry(group).or_default();
        for span in &annotation.spans {
            *entry.entry(span.category).or_insert(0) += span.end - span.start;
        }
    }
    counts
        .into_iter()
        .map(|(group, by_category)| {
            let total: usize = by_category.values().sum();
            let fractions = by_category
                .into_iter()
                .map(|(category, count)| (category, count as f64 / total as f64))
                .collect();
            (group, fractions)
        })
        .collect()
}

#[derive(Default, Clone, Copy)]
struct F1Accum {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl F1Accum {
    fn f1(self) -> f64 {
        let tp = self.tp as f64;
        let p_denom = self.tp + self.fp;
        let r_denom = self.tp + self.fn_;
        if p_denom == 0 || r_denom == 0 {
            return 0.0;
        }
        let p = tp / p_denom as f64;
        let r = tp / r_denom as f64;
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn accumulate(
    accum: &mut BTreeMap<Category, F1Accum>,
    reference: &[Option<Category>],
    predicted: &[Option<Category>],
) {
    for (gold, pred) in reference.iter().zip(predicted) {
        match (gold, pred) {
            (Some(g), Some(p)) if g == p => accum.entry(*g).or_default().tp += 1,
            (gold, pred) => {
                if let Some(g) = gold {
                    accum.entry(*g).or_default().fn_ += 1;
                }
                if let Some(p) = pred {
                    accum.entry(*p).or_default().fp += 1;
                }
            }
        }
    }
}

fn macro_f1(accum: &BTreeMap<Category, F1Accum>) -> f64 {
    let present: Vec<f64> = accum
        .values()
        .filter(|a| a.tp + a.fp + a.fn_ > 0)
        .map(|a| a.f1())
        .collect();
    if present.is_empty() {
        // nothing labeled on either side: vacuous agreement
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Inter-annotator agreement: token-level F1 per category with `a` as
/// reference and `b` as prediction, macro-averaged over categories labeled
/// by either annotator. Symmetric in its arguments.
pub fn pairwise_f(a: &[AnnotatedResponse], b: &[AnnotatedResponse]) -> Result<f64, CategoryError> {
    let key = |r: &AnnotatedResponse| (r.id.clone(), r.model.clone());
    let b_by_key: HashMap<(String, String), &AnnotatedResponse> =
        b.iter().map(|r| (key(r), r)).collect();
    if a.len() != b.len() || a.iter().any(|r| !b_by_key.contains_key(&key(r))) {
        let a_keys: BTreeSet<String> = a.iter().map(|r| format!("{}/{}", r.id, r.model)).collect();
        let b_keys: BTreeSet<String> = b.iter().map(|r| format!("{}/{}", r.id, r.model)).collect();
        let diff: Vec<&String> = a_keys.symmetric_difference(&b_keys).collect();
        return Err(CategoryError::MismatchedCoverage(format!("{diff:?}")));
    }

    let mut accum: BTreeMap<Category, F1Accum> = BTreeMap::new();
    for reference in a {
        let predicted = b_by_key[&key(reference)];
        if predicted.response_text != reference.response_text {
            return Err(CategoryError::MismatchedCoverage(format!(
                "response texts differ for {}/{}",
                reference.id, reference.model
            )));
        }
        reference.validate()?;
        predicted.validate()?;
        accumulate(
            &mut accum,
            &reference.token_labels(),
            &predicted.token_labels(),
        );
    }
    Ok(macro_f1(&accum))
}

/// Per-category and macro token F1 for one response's spans.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenF1 {
    pub per_category: BTreeMap<Category, f64>,
    pub macro_f1: f64,
}

/// Token-level multiclass F1 of predicted spans against gold spans.
/// Categories absent from both sides are excluded from the macro average.
pub fn token_f1(
    pred: &[CategorySpan],
    gold: &[CategorySpan],
    n_tokens: usize,
) -> Result<TokenF1, CategoryError> {
    validate_spans(pred, n_tokens)?;
    validate_spans(gold, n_tokens)?;
    let expand = |spans: &[CategorySpan]| {
        let mut labels = vec![None; n_tokens];
        for span in spans {
            for label in labels.iter_mut().take(span.end).skip(span.start) {
                *label = Some(span.category);
            }
        }
        labels
    };
    let mut accum: BTreeMap<Category, F1Accum> = BTreeMap::new();
    accumulate(&mut accum, &expand(gold), &expand(pred));
    let per_category = accum
        .iter()
        .filter(|(_, a)| a.tp + a.fp + a.fn_ > 0)
        .map(|(c, a)| (*c, a.f1()))
        .collect();
    Ok(TokenF1 {
        per_category,
        macro_f1: macro_f1(&accum),
    })
}

/// Convert character-offset spans (as released annotation data often uses)
/// into token spans: a token belongs to the span containing its first
/// character. Character ranges must not overlap.
pub fn spans_from_char_offsets(
    response_text: &str,
    char_spans: &[(usize, usize, Category)],
) -> Result<Vec<CategorySpan>, CategoryError> {
    let offsets = crate::tokenize::tokenize_with_char_offsets(response_text);
    let n_tokens = offsets.len();
    let mut spans = Vec::new();
    for &(start_char, end_char, category) in char_spans {
        let mut first = None;
        let mut last = None;
        for (i, (tok_start, _, _)) in offsets.iter().enumerate() {
            if (start_char..end_char).contains(tok_start) {
                if first.is_none() {
                    first = Some(i);
                }
                last = Some(i);
            }
        }
        if let (Some(first), Some(last)) = (first, last) {
            spans.push(CategorySpan {
                start: first,
                end: last + 1,
                category,
            });
        }
    }
    spans.sort_by_key(|s| s.start);
    validate_spans(&spans, n_tokens)?;
    Ok(spans)
}

/// Spans produced by [`auto_categorize`] plus how many reply fragments
/// could not be aligned back to the response.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoCategorization {
    pub spans: Vec<CategorySpan>,
    pub dropped: usize,
    /// Raw model reply, kept for inspection.
    pub reply: String,
}

/// Substitute `{question}` / `{response}` without rescanning inserted text.
fn fill_template(template: &str, question: &str, response: &str) -> String {
    let mut out = String::with_capacity(template.len() + question.len() + response.len());
    let mut rest = template;
    loop {
        let next_q = rest.find("{question}");
        let next_r = rest.find("{response}");
        match (next_q, next_r) {
            (None, None) => {
                out.push_str(rest);
                return out;
            }
            (Some(q), r) if r.is_none_or(|r| q < r) => {
                out.push_str(&rest[..q]);
                out.push_str(question);
                rest = &rest[q + "{question}".len()..];
            }
            (_, Some(r)) => {
                out.push_str(&rest[..r]);
                out.push_str(response);
                rest = &rest[r + "{response}".len()..];
            }
            _ => unreachable!(),
        }
    }
}

/// Parse "CATEGORY: fragment" reply lines.
fn parse_fragments(reply: &str) -> Result<Vec<(Category, String)>, CategoryError> {
    let mut fragments = Vec::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches("- ").trim();
        if line.is_empty() {
            continue;
        }
        let (label, fragment) = line.split_once(':').ok_or_else(|| {
            CategoryError::MalformedModelOutput(format!("line without \"CATEGORY:\" form: {line}"))
        })?;
        let category = Category::parse(label).ok_or_else(|| {
            CategoryError::MalformedModelOutput(format!("unknown category \"{label}\""))
        })?;
        let fragment = fragment.trim();
        if !fragment.is_empty() {
            fragments.push((category, fragment.to_string()));
        }
    }
    if fragments.is_empty() {
        return Err(CategoryError::MalformedModelOutput(
            "reply contained no usable fragments".into(),
        ));
    }
    Ok(fragments)
}

/// Ask an LLM to segment `response_text` into labeled verbatim fragments
/// and align them back to token spans. Each fragment is matched to its
/// first occurrence (left to right) whose tokens are not yet consumed;
/// fragments that cannot be aligned are dropped and counted.
pub fn auto_categorize(
    client: &dyn TextCompleter,
    response_text: &str,
    question: &str,
) -> Result<AutoCategorization, CategoryError> {
    let prompt = fill_template(CATEGORIZE_PROMPT, question, response_text);
    let reply = client.complete(&prompt)?;
    let fragments = parse_fragments(&reply)?;

    let tokens = tokenize(response_text, Scheme::UnicodeWords).tokens;
    let mut consumed = vec![false; tokens.len()];
    let mut spans = Vec::new();
    let mut dropped = 0usize;
    for (category, fragment) in fragments {
        let frag_tokens = tokenize(&fragment, Scheme::UnicodeWords).tokens;
        if frag_tokens.is_empty() || frag_tokens.len() > tokens.len() {
            dropped += 1;
            continue;
        }
        let mut placed = false;
        for start in 0..=(tokens.len() - frag_tokens.len()) {
            let range = start..start + frag_tokens.len();
            if tokens[range.clone()] == frag_tokens[..]
                && !consumed[range.clone()].iter().any(|c| *c)
            {
                consumed[range.clone()].iter_mut().for_each(|c| *c = true);
                spans.push(CategorySpan {
                    start,
                    end: start + frag_tokens.len(),
                    category,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            dropped += 1;
        }
    }
    spans.sort_by_key(|s| s.start);
    Ok(AutoCategorization {
        spans,
        dropped,
        reply,
    })
}
