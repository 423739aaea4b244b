//! QA dataset ingestion into a canonical record format.
//!
//! The canonical on-disk form is one JSON object per line with fields
//! `{id, dataset, split, context?, question, target_answer, target_length?,
//! extra_answers?}`. [`load_corpus`] additionally accepts a few common field
//! aliases from raw dataset dumps (`target`/`answer`/`answers`/`response`
//! for the target, `instruction`/`query` for the question) and normalizes
//! them, so one loader covers both canonical files and lightly adapted
//! source data. Missing ids are generated from line numbers, a missing
//! dataset falls back to the caller's label, and a missing split defaults
//! to `test`.
//!
//! Sampling is reproducible across implementations: it uses the splitmix64
//! generator (documented below) driving a partial Fisher–Yates shuffle,
//! with index selection by `next_u64() % remaining`.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dataset split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

/// One dataset sample: question, optional context, and the gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub dataset: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub question: String,
    pub target_answer: String,
    /// Whitespace word count of `target_answer`; filled by
    /// [`crate::tokenize::fill_target_lengths`] when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_length: Option<u32>,
    /// Further gold answers beyond the first (MS-MARCO style); scoring uses
    /// `target_answer` only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_answers: Vec<String>,
}

/// Where a corpus came from and which seed shaped it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub seed: Option<u64>,
}

/// An ordered, id-unique collection of records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub records: Vec<QueryRecord>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Linear scan by id; build [`Corpus::id_index`] for bulk lookups.
    pub fn find(&self, id: &str) -> Option<&QueryRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Map from record id to position in `records`.
    pub fn id_index(&self) -> std::collections::HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    /// Deterministic sample of `n` records from one split, without
    /// replacement. `strict` controls whether fewer-than-`n` available
    /// records is an error or returns the whole (permuted) split.
    pub fn sample_split(
        &self,
        split: Split,
        n: usize,
        seed: u64,
        strict: bool,
    ) -> Result<Corpus, CorpusError> {
        let mut candidates: Vec<&QueryRecord> =
            self.records.iter().filter(|r| r.split == split).collect();
        if strict && candidates.len() < n {
            return Err(CorpusError::InsufficientRecords {
                requested: n,
                available: candidates.len(),
            });
        }
        let take = n.min(candidates.len());
        let mut state = seed;
        for i in 0..take {
            let remaining = candidates.len() - i;
            let j = i + (splitmix64(&mut state) % remaining as u64) as usize;
            candidates.swap(i, j);
        }
        let records = candidates[..take].iter().map(|r| (*r).clone()).collect();
        Ok(Corpus {
            records,
            provenance: Provenance {
                sources: self.provenance.sources.clone(),
                seed: Some(seed),
            },
        })
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate record id '{id}' (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("corpus has no records")]
    EmptyCorpus,
    #[error("requested {requested} records, only {available} available")]
    InsufficientRecords { requested: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// splitmix64 (Steele, Lea, Flood 2014): the fixed PRNG behind all corpus
/// sampling, chosen so samples are reproducible from a seed in any language.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Load a line-delimited corpus file. Malformed lines are rejected with
/// their line number; blank lines are ignored. `dataset_label` fills the
/// `dataset` field of records that do not carry one.
pub fn load_corpus(path: &Path, dataset_label: &str) -> Result<Corpus, CorpusError> {
    load_corpus_with(path, dataset_label, Split::Test)
}

/// [`load_corpus`] with an explicit default split for records missing one.
pub fn load_corpus_with(
    path: &Path,
    dataset_label: &str,
    default_split: Split,
) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::FileNotFound(path.to_path_buf())
        } else {
            CorpusError::Io(e)
        }
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record_line(&line, line_no, dataset_label, default_split)?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: record.id,
                line: line_no,
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Corpus {
        records,
        provenance: Provenance {
            sources: vec![path.display().to_string()],
            seed: None,
        },
    })
}

/// Parse one corpus line, normalizing the accepted field aliases into a
/// canonical [`QueryRecord`].
pub fn parse_record_line(
    line: &str,
    line_no: usize,
    dataset_label: &str,
    default_split: Split,
) -> Result<QueryRecord, CorpusError> {
    let parse_err = |reason: String| CorpusError::Parse {
        line: line_no,
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| parse_err(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("line is not a JSON object".into()))?;

    let string_field = |keys: &[&str]| -> Option<String> {
        for key in keys {
            match obj.get(*key) {
                Some(serde_json::Value::String(s)) => return Some(s.clone()),
                Some(serde_json::Value::Number(n)) => return Some(n.to_string()),
                _ => {}
            }
        }
        None
    };

    let question = string_field(&["question", "instruction", "query"])
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| parse_err("missing or empty \"question\" field".into()))?;

    // Target answer: first string wins; an array keeps the first element as
    // the target and the rest as extra answers.
    let mut target_answer = None;
    let mut extra_answers = Vec::new();
    for key in ["target_answer", "target", "answer", "answers", "response"] {
        match obj.get(key) {
            Some(serde_json::Value::String(s)) => {
                target_answer = Some(s.clone());
                break;
            }
            Some(serde_json::Value::Array(items)) => {
                let strings: Vec<String> = items
                    .iter()
                    .filter_map(|v| v.as_str().map(str::to_owned))
                    .collect();
                if let Some((first, rest)) = strings.split_first() {
                    target_answer = Some(first.clone());
                    extra_answers = rest.to_vec();
                    break;
                }
            }
            _ => {}
        }
    }
    let target_answer =
        target_answer.ok_or_else(|| parse_err("missing \"target_answer\" field".into()))?;
    if let Some(serde_json::Value::Array(items)) = obj.get("extra_answers") {
        extra_answers = items
            .iter()
            .filter_map(|v| v.as_str().map(str::to_owned))
            .collect();
    }

    let id = string_field(&["id"])
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("r{line_no:06}"));
    let dataset = string_field(&["dataset"])
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| dataset_label.to_string());
    let split = match obj.get("split") {
        Some(serde_json::Value::String(s)) => {
            Split::parse(s).ok_or_else(|| parse_err(format!("invalid split value \"{s}\"")))?
        }
        Some(other) => return Err(parse_err(format!("invalid split value {other}"))),
        None => default_split,
    };
    let context = string_field(&["context", "passage"]).filter(|c| !c.trim().is_empty());
    let target_length = match obj.get("target_length") {
        Some(serde_json::Value::Number(n)) => {
            let v = n
                .as_u64()
                .ok_or_else(|| parse_err("target_length must be a non-negative integer".into()))?;
            Some(v as u32)
        }
        Some(other) => {
            return Err(parse_err(format!("invalid target_length value {other}")));
        }
        None => None,
    };

    Ok(QueryRecord {
        id,
        dataset,
        split,
        context,
        question,
        target_answer,
        target_length,
        extra_answers,
    })
}

/// Write a corpus in the canonical line format.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in &corpus.records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Conventional per-dataset contribution to a pooled training set: five
/// datasets at this size give a 25k-record pool.
pub const DEFAULT_POOL_PER_DATASET: usize = 5_000;

/// Concatenate deterministic train-split samples from several corpora into
/// one pool, namespacing ids as `dataset/id` so pools never collide.
/// [`DEFAULT_POOL_PER_DATASET`] is the conventional `per_dataset` value.
pub fn build_train_pool(
    corpora: &[Corpus],
    per_dataset: usize,
    seed: u64,
    strict: bool,
) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    let mut sources = Vec::new();
    let mut seen = HashSet::new();
    for corpus in corpora {
        let sample = corpus.sample_split(Split::Train, per_dataset, seed, strict)?;
        for mut record in sample.records {
            record.id = format!("{}/{}", record.dataset, record.id);
            if !seen.insert(record.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    id: record.id,
                    line: 0,
                });
            }
            records.push(record);
        }
        sources.extend(corpus.provenance.sources.iter().cloned());
    }
    Ok(Corpus {
        records,
        provenance: Provenance {
            sources,
            seed: Some(seed),
        },
    })
}
