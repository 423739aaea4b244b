//! BM25+ retrieval over the training pool.
//!
//! Documents are the pool questions (contexts excluded), tokenized as
//! lowercased `UnicodeWords`. The score of document `d` for query `q` is
//!
//! ```text
//! score(q, d) = Σ over distinct query terms t with tf(t,d) > 0 of
//!     idf(t) · ( tf·(k1+1) / (tf + k1·(1 − b + b·dl/avgdl)) + δ )
//! idf(t) = ln((N + 1) / df(t))
//! ```
//!
//! with k1 = 1.2, b = 0.75, δ = 1.0 by default. Ranking sorts by score
//! descending with ties broken by ascending record id, so results are fully
//! deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::tokenize::{tokenize_normalized, Scheme};

const INDEX_FORMAT_VERSION: u32 = 1;

/// BM25+ parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub delta: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 1.2,
            b: 0.75,
            delta: 1.0,
        }
    }
}

/// One indexed document: record id, term counts, and length in tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedDoc {
    pub id: String,
    pub term_counts: BTreeMap<String, u32>,
    pub len: u32,
}

/// In-memory BM25+ index with a versioned JSON on-disk form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub version: u32,
    pub params: Bm25Params,
    pub docs: Vec<IndexedDoc>,
    pub df: BTreeMap<String, u32>,
    pub avgdl: f64,
    pub n_docs: usize,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("pool record '{0}' has no target_length")]
    MissingTargetLength(String),
    #[error("record id '{0}' not present in pool")]
    UnknownRecordId(String),
    #[error("unsupported index format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("index file is not valid JSON: {0}")]
    Format(#[from] serde_json::Error),
}

/// Build an index over the pool's question texts.
pub fn build_index(pool: &Corpus, params: Bm25Params) -> Result<Bm25Index, RetrievalError> {
    if pool.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut docs = Vec::with_capacity(pool.len());
    let mut df: BTreeMap<String, u32> = BTreeMap::new();
    let mut total_len: u64 = 0;
    for record in &pool.records {
        let tokens = tokenize_normalized(&record.question, Scheme::UnicodeWords);
        let mut term_counts: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens.tokens {
            *term_counts.entry(token).or_insert(0) += 1;
        }
        for term in term_counts.keys() {
            *df.entry(term.clone()).or_insert(0) += 1;
        }
        let len = term_counts.values().sum::<u32>();
        total_len += u64::from(len);
        docs.push(IndexedDoc {
            id: record.id.clone(),
            term_counts,
            len,
        });
    }
    let n_docs = docs.len();
    Ok(Bm25Index {
        version: INDEX_FORMAT_VERSION,
        params,
        docs,
        df,
        avgdl: total_len as f64 / n_docs as f64,
        n_docs,
    })
}

impl Bm25Index {
    /// Score one document against the distinct query terms.
    fn score_doc(&self, query_terms: &BTreeSet<String>, doc: &IndexedDoc) -> f64 {
        let Bm25Params { k1, b, delta } = self.params;
        let mut score = 0.0;
        for term in query_terms {
            let tf = doc.term_counts.get(term).copied().unwrap_or(0);
            if tf == 0 {
                continue;
            }
            let df = f64::from(self.df[term]);
            let idf = ((self.n_docs as f64 + 1.0) / df).ln();
            let tf = f64::from(tf);
            let dl = f64::from(doc.len);
            let norm = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avgdl));
            score += idf * (norm + delta);
        }
        score
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Bm25Index, RetrievalError> {
        let text = std::fs::read_to_string(path)?;
        let index: Bm25Index = serde_json::from_str(&text)?;
        if index.version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::UnsupportedVersion {
                found: index.version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        Ok(index)
    }
}

/// The `min(k, N)` best documents for `query`, as `(record id, score)` in
/// rank order. A query sharing no terms with any document still ranks all
/// documents (scores 0, tie-broken by id).
pub fn top_k(
    index: &Bm25Index,
    query: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let query_terms: BTreeSet<String> = tokenize_normalized(query, Scheme::UnicodeWords)
        .tokens
        .into_iter()
        .collect();
    let mut scored: Vec<(&str, f64)> = index
        .docs
        .iter()
        .map(|doc| (doc.id.as_str(), index.score_doc(&query_terms, doc)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect())
}

/// Median target length (whitespace words) of the query's top-k neighbors,
/// clamped to at least 1. An even neighbor count averages the two middle
/// values, rounding half up.
pub fn median_target_length(
    index: &Bm25Index,
    pool: &Corpus,
    query: &str,
    k: usize,
) -> Result<u32, RetrievalError> {
    let ranked = top_k(index, query, k)?;
    let by_id = pool.id_index();
    let mut lengths = Vec::with_capacity(ranked.len());
    for (id, _) in &ranked {
        let record = by_id
            .get(id.as_str())
            .map(|&i| &pool.records[i])
            .ok_or_else(|| RetrievalError::UnknownRecordId(id.clone()))?;
        let len = record
            .target_length
            .ok_or_else(|| RetrievalError::MissingTargetLength(id.clone()))?;
        lengths.push(len);
    }
    if lengths.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    lengths.sort_unstable();
    let n = lengths.len();
    let median = if n % 2 == 1 {
        lengths[n / 2]
    } else {
        // mean of the two middle values, rounded half up
        (lengths[n / 2 - 1] + lengths[n / 2]).div_ceil(2)
    };
    Ok(median.max(1))
}
