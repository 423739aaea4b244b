//! Deterministic tokenization used for length measurement, retrieval, and
//! ROUGE-L.
//!
//! Two schemes are supported. `Whitespace` splits on Unicode whitespace runs
//! and is what "words" means throughout the crate (word limits, target
//! lengths). `UnicodeWords` additionally separates punctuation: maximal runs
//! of letters/digits become one token each and every other non-whitespace
//! character becomes its own token. `UnicodeWords` is the default
//! measurement scheme for generated/target lengths, so ratios stay
//! comparable across models without embedding any model's tokenizer.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

/// Tokenization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Split on Unicode whitespace runs.
    Whitespace,
    /// Alphanumeric runs plus single-character punctuation tokens.
    #[default]
    UnicodeWords,
}

/// An ordered token list together with the scheme that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenList {
    pub tokens: Vec<String>,
    pub scheme: Scheme,
}

impl TokenList {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Tokenize `text` under the given scheme. Case is preserved; use
/// [`tokenize_normalized`] where a lowercased view is needed (ROUGE, BM25).
pub fn tokenize(text: &str, scheme: Scheme) -> TokenList {
    let tokens = match scheme {
        Scheme::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
        Scheme::UnicodeWords => unicode_word_tokens(text),
    };
    TokenList { tokens, scheme }
}

/// Lowercased tokens for matching-style uses.
pub fn tokenize_normalized(text: &str, scheme: Scheme) -> TokenList {
    let mut list = tokenize(text, scheme);
    for t in &mut list.tokens {
        *t = t.to_lowercase();
    }
    list
}

/// Number of tokens `text` produces under `scheme`.
pub fn count_tokens(text: &str, scheme: Scheme) -> usize {
    tokenize(text, scheme).len()
}

/// Fill `target_length` (whitespace word count of the target answer) on every
/// record that does not already carry one.
pub fn fill_target_lengths(corpus: &mut Corpus) {
    for record in &mut corpus.records {
        if record.target_length.is_none() {
            record.target_length =
                Some(count_tokens(&record.target_answer, Scheme::Whitespace) as u32);
        }
    }
}

fn unicode_word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            run.push(ch);
        } else {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

/// `UnicodeWords` tokens together with their character offsets
/// `(start, end)` into the text (end exclusive). Used to convert
/// character-span annotations into token spans.
pub fn tokenize_with_char_offsets(text: &str) -> Vec<(usize, usize, String)> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    let mut run_start = 0usize;
    for (i, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if run.is_empty() {
                run_start = i;
            }
            run.push(ch);
        } else {
            if !run.is_empty() {
                tokens.push((run_start, i, std::mem::take(&mut run)));
            }
            if !ch.is_whitespace() {
                tokens.push((i, i + 1, ch.to_string()));
            }
        }
    }
    if !run.is_empty() {
        let end = text.chars().count();
        tokens.push((run_start, end, run));
    }
    tokens
}

/// Hook for model-faithful token counts: an external command receiving the
/// text on stdin and printing one integer (the token count) on stdout.
#[derive(Debug, Clone)]
pub struct ExternalTokenizer {
    pub command: String,
    pub args: Vec<String>,
}

impl ExternalTokenizer {
    pub fn new(command: impl Into<String>, args: Vec<String>) -> ExternalTokenizer {
        ExternalTokenizer {
            command: command.into(),
            args,
        }
    }

    pub fn count(&self, text: &str) -> std::io::Result<usize> {
        use std::io::Write as _;
        use std::process::{Command, Stdio};
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(text.as_bytes())?;
        let output = child.wait_with_output()?;
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout
            .split_whitespace()
            .next()
            .and_then(|tok| tok.parse().ok())
            .ok_or_else(|| {
                std::io::Error::other(format!("no token count in tokenizer output {stdout:?}"))
            })
    }
}
