//! Prompt construction for every length-control strategy.
//!
//! All prompts share one scaffold: an optional context block, one blank
//! line, a `### Question: ` line, an optional directive line, and a final
//! `### Response:` line. The directive strings are fixed verbatim and pinned
//! by golden-file tests; changing a byte of them invalidates comparisons
//! across runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, QueryRecord};
use crate::lengthmodel::{LengthModelError, LengthPredictor};
use crate::retrieval::{median_target_length, top_k, Bm25Index, RetrievalError};

pub const DIRECTIVE_BRIEF: &str = "Answer briefly.";
pub const DIRECTIVE_MINANS: &str = "Only provide the minimal answer.";
pub const DIRECTIVE_MADDNORED: &str = "Provide the minimal answer. Provide some additional information where applicable, but do not produce redundant text or politeness and conversational enhancements.";

/// Render the word-limit directive for a resolved limit `x`.
pub fn directive_limit(x: u32) -> String {
    format!("Answer within {x} words.")
}

/// The strategy families for shortening responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Default,
    Brief,
    MinAns,
    MAddNoRed,
    Limit,
    InContext,
}

/// Where the word limit X of a `Limit` strategy comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitSource {
    /// Median target length of the BM25+ nearest neighbors.
    SimilarBm,
    /// The record's own gold answer length (oracle).
    GoldResLen,
    /// The trained length predictor.
    PredResLen,
}

/// A strategy plus its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_source: Option<LimitSource>,
    /// BM25+ neighbors consulted by `SimilarBm`.
    #[serde(default = "default_k")]
    pub neighbors: usize,
    /// In-context examples used by `InContext`.
    #[serde(default = "default_k")]
    pub incontext_examples: usize,
}

fn default_k() -> usize {
    10
}

impl Strategy {
    pub fn plain(kind: StrategyKind) -> Strategy {
        Strategy {
            kind,
            limit_source: None,
            neighbors: 10,
            incontext_examples: 10,
        }
    }

    pub fn limit(source: LimitSource) -> Strategy {
        Strategy {
            kind: StrategyKind::Limit,
            limit_source: Some(source),
            neighbors: 10,
            incontext_examples: 10,
        }
    }

    /// limit_source must be present exactly when kind is `Limit`.
    pub fn validate(&self) -> Result<(), PromptError> {
        match (self.kind, self.limit_source) {
            (StrategyKind::Limit, None) => Err(PromptError::InvalidStrategy(
                "limit strategy needs a limit source (similarbm, goldreslen, predreslen)".into(),
            )),
            (kind, Some(_)) if kind != StrategyKind::Limit => Err(PromptError::InvalidStrategy(
                format!("{} strategy does not take a limit source", self.label()),
            )),
            _ => Ok(()),
        }
    }

    /// Stable label used in run files, score files, and reports.
    pub fn label(&self) -> String {
        match (self.kind, self.limit_source) {
            (StrategyKind::Default, _) => "default".into(),
            (StrategyKind::Brief, _) => "brief".into(),
            (StrategyKind::MinAns, _) => "minans".into(),
            (StrategyKind::MAddNoRed, _) => "maddnored".into(),
            (StrategyKind::InContext, _) => "incontext".into(),
            (StrategyKind::Limit, Some(LimitSource::SimilarBm)) => "limit:similarbm".into(),
            (StrategyKind::Limit, Some(LimitSource::GoldResLen)) => "limit:goldreslen".into(),
            (StrategyKind::Limit, Some(LimitSource::PredResLen)) => "limit:predreslen".into(),
            (StrategyKind::Limit, None) => "limit:?".into(),
        }
    }

    /// All eight concrete strategies, in report order.
    pub fn all() -> Vec<Strategy> {
        vec![
            Strategy::plain(StrategyKind::Default),
            Strategy::plain(StrategyKind::Brief),
            Strategy::plain(StrategyKind::MinAns),
            Strategy::plain(StrategyKind::MAddNoRed),
            Strategy::limit(LimitSource::SimilarBm),
            Strategy::limit(LimitSource::GoldResLen),
            Strategy::limit(LimitSource::PredResLen),
            Strategy::plain(StrategyKind::InContext),
        ]
    }
}

impl std::str::FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Strategy, PromptError> {
        let strategy = match s.trim().to_ascii_lowercase().as_str() {
            "default" => Strategy::plain(StrategyKind::Default),
            "brief" => Strategy::plain(StrategyKind::Brief),
            "minans" => Strategy::plain(StrategyKind::MinAns),
            "maddnored" => Strategy::plain(StrategyKind::MAddNoRed),
            "incontext" => Strategy::plain(StrategyKind::InContext),
            "limit:similarbm" | "similarbm" => Strategy::limit(LimitSource::SimilarBm),
            "limit:goldreslen" | "goldreslen" => Strategy::limit(LimitSource::GoldResLen),
            "limit:predreslen" | "predreslen" => Strategy::limit(LimitSource::PredResLen),
            other => {
                return Err(PromptError::InvalidStrategy(format!(
                    "unknown strategy \"{other}\""
                )))
            }
        };
        Ok(strategy)
    }
}

/// A fully resolved prompt for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub record_id: String,
    pub strategy: Strategy,
    /// The X actually injected into "Answer within X words."
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_limit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incontext_ids: Option<Vec<String>>,
    pub prompt_text: String,
}

/// Resources a strategy may need: index and pool for retrieval-based
/// strategies, a predictor for `limit:predreslen`.
#[derive(Default, Clone, Copy)]
pub struct PromptDeps<'a> {
    pub index: Option<&'a Bm25Index>,
    pub pool: Option<&'a Corpus>,
    pub predictor: Option<&'a LengthPredictor>,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("strategy {strategy} needs {missing}")]
    MissingDependency {
        strategy: String,
        missing: &'static str,
    },
    #[error("record '{0}' has no target_length (required by limit:goldreslen)")]
    MissingTargetLength(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Predictor(#[from] LengthModelError),
}

fn scaffold(record: &QueryRecord, directive: Option<&str>) -> String {
    let mut text = String::new();
    if let Some(context) = record.context.as_deref() {
        text.push_str(context);
        text.push_str("\n\n");
    }
    text.push_str("### Question: ");
    text.push_str(&record.question);
    text.push('\n');
    if let Some(directive) = directive {
        text.push_str(directive);
        text.push('\n');
    }
    text.push_str("### Response:");
    text
}

/// Build the exact prompt text for a record under a strategy.
pub fn build_prompt(
    record: &QueryRecord,
    strategy: &Strategy,
    deps: &PromptDeps,
) -> Result<PromptSpec, PromptError> {
    strategy.validate()?;
    let mut resolved_limit = None;
    let mut incontext_ids = None;

    let prompt_text = match strategy.kind {
        StrategyKind::Default => scaffold(record, None),
        StrategyKind::Brief => scaffold(record, Some(DIRECTIVE_BRIEF)),
        StrategyKind::MinAns => scaffold(record, Some(DIRECTIVE_MINANS)),
        StrategyKind::MAddNoRed => scaffold(record, Some(DIRECTIVE_MADDNORED)),
        StrategyKind::Limit => {
            let x = match strategy.limit_source.expect("validated above") {
                LimitSource::SimilarBm => {
                    let index = deps.index.ok_or_else(|| PromptError::MissingDependency {
                        strategy: strategy.label(),
                        missing: "a BM25+ index",
                    })?;
                    let pool = deps.pool.ok_or_else(|| PromptError::MissingDependency {
                        strategy: strategy.label(),
                        missing: "the training pool",
                    })?;
                    median_target_length(index, pool, &record.question, strategy.neighbors)?
                }
                LimitSource::GoldResLen => record
                    .target_length
                    .ok_or_else(|| PromptError::MissingTargetLength(record.id.clone()))?
                    .max(1),
                LimitSource::PredResLen => {
                    let predictor =
                        deps.predictor
                            .ok_or_else(|| PromptError::MissingDependency {
                                strategy: strategy.label(),
                                missing: "a length predictor",
                            })?;
                    predictor.predict(record)?
                }
            };
            resolved_limit = Some(x);
            scaffold(record, Some(&directive_limit(x)))
        }
        StrategyKind::InContext => {
            let index = deps.index.ok_or_else(|| PromptError::MissingDependency {
                strategy: strategy.label(),
                missing: "a BM25+ index",
            })?;
            let pool = deps.pool.ok_or_else(|| PromptError::MissingDependency {
                strategy: strategy.label(),
                missing: "the training pool",
            })?;
            let examples = select_incontext(index, pool, record, strategy.incontext_examples)?;
            incontext_ids = Some(examples.iter().map(|e| e.id.clone()).collect());
            let mut text = String::new();
            for example in &examples {
                text.push_str(&scaffold(example, None));
                text.push(' ');
                text.push_str(&example.target_answer);
                text.push_str("\n\n");
            }
            text.push_str(&scaffold(record, None));
            text
        }
    };

    Ok(PromptSpec {
        record_id: record.id.clone(),
        strategy: strategy.clone(),
        resolved_limit,
        incontext_ids,
        prompt_text,
    })
}

/// The top-m BM25+ neighbors of the record's question, excluding any pool
/// record with an identical question (self-leak guard). Order is descending
/// similarity.
pub fn select_incontext<'a>(
    index: &Bm25Index,
    pool: &'a Corpus,
    record: &QueryRecord,
    m: usize,
) -> Result<Vec<&'a QueryRecord>, PromptError> {
    if m == 0 {
        return Err(PromptError::InvalidStrategy(
            "incontext needs at least one example".into(),
        ));
    }
    let ranked = top_k(index, &record.question, index.n_docs)?;
    let by_id = pool.id_index();
    let mut selected = Vec::with_capacity(m);
    for (id, _) in &ranked {
        let candidate = by_id
            .get(id.as_str())
            .map(|&i| &pool.records[i])
            .ok_or_else(|| RetrievalError::UnknownRecordId(id.clone()))?;
        if candidate.question == record.question {
            continue;
        }
        selected.push(candidate);
        if selected.len() == m {
            break;
        }
    }
    Ok(selected)
}
