//! brevibench measures how much text LLMs generate relative to target answers
//! and what that verbosity costs in inference energy.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`corpus`] — ingest QA datasets into a canonical line format, draw
//!    deterministic evaluation samples and a pooled training set.
//! 2. [`retrieval`] — a BM25+ index over the training pool, used to pick
//!    in-context examples and to estimate answer lengths from neighbors.
//! 3. [`lengthmodel`] — a ridge-regression predictor of the ideal response
//!    length, with an external-predictor HTTP hook.
//! 4. [`promptengine`] — builds the exact prompt text for each
//!    length-control strategy (brief, minimal answer, word limits,
//!    in-context examples).
//! 5. [`llmclient`] — drives OpenAI-compatible completion endpoints with
//!    caching, retries, and bounded concurrency.
//! 6. [`energymeter`] — samples GPU/CPU power during a run and integrates
//!    it to mWh, with per-record attribution.
//! 7. [`metrics`] / [`categories`] — ROUGE-L, length ratios, reasoning-token
//!    fractions, and the six-category information taxonomy.
//! 8. [`report`] — aggregates per-sample scores into markdown/CSV tables.
//! 9. [`pipeline`] — runs the whole thing from a single config file.
//!
//! Each major capability has a runnable example under `examples/`; start
//! with `full_pipeline` for the end-to-end flow. The `brevibench` binary
//! exposes the same operations as subcommands.

pub mod categories;
pub mod corpus;
pub mod energymeter;
pub mod lengthmodel;
pub mod llmclient;
pub mod metrics;
pub mod mockserver;
pub mod pipeline;
pub mod promptengine;
pub mod report;
pub mod retrieval;
pub mod tokenize;

pub use corpus::{Corpus, QueryRecord, Split};
pub use metrics::{RougeScore, ScoreCard};
pub use promptengine::{PromptSpec, Strategy, StrategyKind};
pub use tokenize::Scheme;
