//! End-to-end orchestration from a single TOML config: load corpus →
//! resolve strategy dependencies → run the batch with energy sampling
//! bracketing it → score → aggregate → render. Every artifact lands under
//! the configured output directory together with a manifest recording the
//! config hash and crate version, so a run can be audited and reproduced.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_corpus, Corpus};
use crate::energymeter::{
    attribute, start_sampling, stop_and_integrate, write_trace_csv, AttributionMode, EnergyTrace,
    RecordWindow, SourceConfig,
};
use crate::lengthmodel::{ExternalPredictor, LengthModel, LengthPredictor};
use crate::llmclient::{
    run_batch, write_run_file, EndpointConfig, GenParams, ResponseCache, RunEntry,
};
use crate::metrics::{score_run, write_scores, ScoreOptions, ScoredRun};
use crate::promptengine::{LimitSource, PromptDeps, Strategy, StrategyKind};
use crate::report::{aggregate, render, Dimension, Format};
use crate::retrieval::Bm25Index;
use crate::tokenize::{fill_target_lengths, Scheme};

/// Energy sampling section of a run config.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnergyConfig {
    #[serde(default = "default_interval")]
    pub interval_secs: f64,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
}

fn default_interval() -> f64 {
    15.0
}

/// A complete run description; see `docs/run.example.toml` for the
/// annotated schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Dataset label for corpus records that do not carry one.
    #[serde(default = "default_label")]
    pub dataset_label: String,
    pub output_dir: PathBuf,
    pub strategy: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train_pool: Option<PathBuf>,
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub length_model: Option<PathBuf>,
    /// URL of an external length predictor (alternative to `length_model`).
    #[serde(default)]
    pub external_predictor: Option<String>,
    #[serde(default)]
    pub scheme: Scheme,
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub generation: Option<GenParams>,
    #[serde(default)]
    pub energy: EnergyConfig,
}

fn default_label() -> String {
    "corpus".into()
}

impl RunConfig {
    pub fn generation_params(&self) -> GenParams {
        self.generation.clone().unwrap_or_default()
    }
}

/// One validation problem: the config field and what is wrong with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub field: String,
    pub problem: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.problem)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("could not parse config: {0}")]
    ConfigParse(String),
    #[error("config did not validate:\n{}", .0.iter().map(|f| format!("  - {f}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Finding>),
    #[error("stage {stage} failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read and parse a TOML run config.
pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::ConfigParse(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| PipelineError::ConfigParse(e.to_string()))
}

/// Check that every cross-reference in the config resolves. An empty list
/// means the config is runnable.
pub fn validate(config: &RunConfig) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut finding = |field: &str, problem: String| {
        findings.push(Finding {
            field: field.into(),
            problem,
        })
    };

    if !config.corpus.exists() {
        finding(
            "corpus",
            format!("file not found: {}", config.corpus.display()),
        );
    }
    let strategy: Option<Strategy> = match config.strategy.parse() {
        Ok(s) => Some(s),
        Err(e) => {
            finding("strategy", format!("{e}"));
            None
        }
    };
    if let Some(strategy) = &strategy {
        let needs_retrieval = strategy.kind == StrategyKind::InContext
            || strategy.limit_source == Some(LimitSource::SimilarBm);
        if needs_retrieval {
            match &config.index {
                None => finding("index", "strategy needs a BM25+ index path".into()),
                Some(path) if !path.exists() => {
                    finding("index", format!("file not found: {}", path.display()))
                }
                _ => {}
            }
            match &config.train_pool {
                None => finding("train_pool", "strategy needs the training pool".into()),
                Some(path) if !path.exists() => {
                    finding("train_pool", format!("file not found: {}", path.display()))
                }
                _ => {}
            }
        }
        if strategy.limit_source == Some(LimitSource::PredResLen) {
            match (&config.length_model, &config.external_predictor) {
                (None, None) => finding(
                    "length_model",
                    "limit:predreslen needs a length model path or an external predictor URL"
                        .into(),
                ),
                (Some(path), _) if !path.exists() => finding(
                    "length_model",
                    format!("file not found: {}", path.display()),
                ),
                _ => {}
            }
        }
    }
    if config.endpoint.base_url.trim().is_empty() {
        finding("endpoint.base_url", "must not be empty".into());
    }
    if config.endpoint.parallelism == 0 {
        finding("endpoint.parallelism", "must be at least 1".into());
    }
    if config.endpoint.timeout_secs <= 0.0 {
        finding("endpoint.timeout_secs", "must be positive".into());
    }
    let params = config.generation_params();
    if params.max_new_tokens == 0 {
        finding("generation.max_new_tokens", "must be at least 1".into());
    }
    if !config.energy.sources.is_empty() && config.energy.interval_secs <= 0.0 {
        finding("energy.interval_secs", "must be positive".into());
    }
    findings
}

/// Artifact paths and counts produced by [`pipeline`].
#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub output_dir: PathBuf,
    pub run_file: PathBuf,
    pub scores_file: PathBuf,
    pub report_md: PathBuf,
    pub report_csv: PathBuf,
    pub manifest_file: PathBuf,
    pub trace_csv: Option<PathBuf>,
    pub energy_file: Option<PathBuf>,
    pub n_records: usize,
    pub n_failed: usize,
    pub total_mwh: Option<f64>,
}

struct LoadedDeps {
    index: Option<Bm25Index>,
    pool: Option<Corpus>,
    predictor: Option<LengthPredictor>,
}

fn stage<T, E: std::fmt::Display>(
    name: &'static str,
    result: Result<T, E>,
) -> Result<T, PipelineError> {
    result.map_err(|e| PipelineError::Stage {
        stage: name,
        message: e.to_string(),
    })
}

fn load_deps(config: &RunConfig, strategy: &Strategy) -> Result<LoadedDeps, PipelineError> {
    let needs_retrieval = strategy.kind == StrategyKind::InContext
        || strategy.limit_source == Some(LimitSource::SimilarBm);
    let mut deps = LoadedDeps {
        index: None,
        pool: None,
        predictor: None,
    };
    if needs_retrieval {
        let index_path = config.index.as_ref().expect("validated");
        deps.index = Some(stage("deps", Bm25Index::load(index_path))?);
        let pool_path = config.train_pool.as_ref().expect("validated");
        let mut pool = stage("deps", load_corpus(pool_path, "pool"))?;
        fill_target_lengths(&mut pool);
        deps.pool = Some(pool);
    }
    if strategy.limit_source == Some(LimitSource::PredResLen) {
        deps.predictor = Some(match (&config.length_model, &config.external_predictor) {
            (Some(path), _) => LengthPredictor::Builtin(stage("deps", LengthModel::load(path))?),
            (None, Some(url)) => LengthPredictor::External(ExternalPredictor::new(url.clone())),
            (None, None) => unreachable!("validated"),
        });
    }
    Ok(deps)
}

/// Per-record energy file entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyShare {
    pub id: String,
    pub energy_mwh: f64,
}

pub fn write_energy_file(shares: &BTreeMap<String, f64>, path: &Path) -> Result<(), PipelineError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, energy_mwh) in shares {
        let line = serde_json::to_string(&EnergyShare {
            id: id.clone(),
            energy_mwh: *energy_mwh,
        })
        .expect("share serializes");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_energy_file(path: &Path) -> Result<BTreeMap<String, f64>, PipelineError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut shares = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let share: EnergyShare = serde_json::from_str(&line).map_err(|e| {
            PipelineError::ConfigParse(format!("energy file line {}: {e}", idx + 1))
        })?;
        shares.insert(share.id, share.energy_mwh);
    }
    Ok(shares)
}

/// Outcome of the generation phase (shared by `run` and `pipeline`).
#[derive(Debug)]
pub struct BatchOutcome {
    pub corpus: Corpus,
    pub entries: Vec<RunEntry>,
    pub run_file: PathBuf,
    pub trace: Option<EnergyTrace>,
    pub trace_csv: Option<PathBuf>,
    pub energy_file: Option<PathBuf>,
    pub energy_shares: Option<BTreeMap<String, f64>>,
}

/// Execute the generation phase: load everything, bracket the batch with
/// energy sampling, persist run + energy artifacts.
pub fn run_only(config: &RunConfig) -> Result<BatchOutcome, PipelineError> {
    let findings = validate(config);
    if !findings.is_empty() {
        return Err(PipelineError::Invalid(findings));
    }
    std::fs::create_dir_all(&config.output_dir)?;

    let strategy: Strategy = config.strategy.parse().expect("validated");
    let mut corpus = stage("load", load_corpus(&config.corpus, &config.dataset_label))?;
    fill_target_lengths(&mut corpus);
    let deps = load_deps(config, &strategy)?;
    let prompt_deps = PromptDeps {
        index: deps.index.as_ref(),
        pool: deps.pool.as_ref(),
        predictor: deps.predictor.as_ref(),
    };
    let cache = stage(
        "run",
        ResponseCache::open(&config.output_dir.join("cache.jsonl")),
    )?;

    let sampler = if config.energy.sources.is_empty() {
        None
    } else {
        Some(stage(
            "energy",
            start_sampling(&config.energy.sources, config.energy.interval_secs),
        )?)
    };

    let params = config.generation_params();
    let batch = run_batch(
        &corpus,
        &strategy,
        &config.endpoint,
        &params,
        &prompt_deps,
        &cache,
        config.scheme,
    );
    let trace = sampler.map(stop_and_integrate);
    let entries = stage("run", batch)?;

    let run_file = config.output_dir.join("run.jsonl");
    stage("run", write_run_file(&entries, &run_file))?;

    // per-record errors are tolerated, a batch where nothing succeeded is a
    // fatal run failure (endpoint down, bad model name, ...)
    if !entries.is_empty() && entries.iter().all(|e| e.error.is_some()) {
        let first = entries[0].error.clone().unwrap_or_default();
        return Err(PipelineError::Stage {
            stage: "run",
            message: format!("no record succeeded; first error: {first}"),
        });
    }

    let mut trace_csv = None;
    let mut energy_file = None;
    let mut energy_shares = None;
    if let Some(trace) = &trace {
        let csv_path = config.output_dir.join("trace.csv");
        stage("energy", write_trace_csv(trace, &csv_path))?;
        trace_csv = Some(csv_path);

        // uniform per-sample attribution over completed generations, with
        // cached windows clamped into the sampled window
        let windows: Vec<RecordWindow> = entries
            .iter()
            .filter_map(|e| e.generation.as_ref())
            .map(|g| RecordWindow {
                id: g.id.clone(),
                start: g.started_at.clamp(trace.window.0, trace.window.1),
                end: g.finished_at.clamp(trace.window.0, trace.window.1),
            })
            .collect();
        if !windows.is_empty() {
            let shares = stage(
                "energy",
                attribute(trace, &windows, AttributionMode::Uniform),
            )?;
            let path = config.output_dir.join("energy.jsonl");
            write_energy_file(&shares, &path)?;
            energy_file = Some(path);
            energy_shares = Some(shares);
        }
    }

    Ok(BatchOutcome {
        corpus,
        entries,
        run_file,
        trace,
        trace_csv,
        energy_file,
        energy_shares,
    })
}

/// The full experiment loop: generation phase, scoring, aggregation, and a
/// manifest. Partial artifacts from completed stages are retained on error.
pub fn pipeline(config: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    let batch = run_only(config)?;

    let scored: ScoredRun = stage(
        "score",
        score_run(
            &batch.entries,
            &batch.corpus,
            batch.energy_shares.as_ref(),
            &ScoreOptions::default(),
        ),
    )?;
    let scores_file = config.output_dir.join("scores.jsonl");
    stage("score", write_scores(&scored.cards, &scores_file))?;

    let rows = aggregate(
        &scored.cards,
        &[Dimension::Model, Dimension::Dataset, Dimension::Strategy],
    );
    let report_md = config.output_dir.join("report.md");
    let report_csv = config.output_dir.join("report.csv");
    stage(
        "report",
        render(&rows, Format::MarkdownTable)
            .and_then(|text| std::fs::write(&report_md, text).map_err(Into::into)),
    )?;
    stage(
        "report",
        render(&rows, Format::Csv)
            .and_then(|text| std::fs::write(&report_csv, text).map_err(Into::into)),
    )?;

    let n_failed = batch.entries.iter().filter(|e| e.error.is_some()).count();
    let manifest_file = config.output_dir.join("manifest.json");
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config_hash(config),
        "strategy": config.strategy,
        "model": config.endpoint.model,
        "corpus": config.corpus.display().to_string(),
        "seed": config.seed,
        "scheme": config.scheme,
        "n_records": batch.entries.len(),
        "n_failed": n_failed,
        "excluded_from_scores": scored.excluded,
        "total_mwh": batch.trace.as_ref().map(|t| t.total_mwh),
        "energy_read_errors": batch.trace.as_ref().map(|t| t.read_errors),
        "artifacts": {
            "run": batch.run_file.display().to_string(),
            "scores": scores_file.display().to_string(),
            "report_md": report_md.display().to_string(),
            "report_csv": report_csv.display().to_string(),
            "trace_csv": batch.trace_csv.as_ref().map(|p| p.display().to_string()),
            "energy": batch.energy_file.as_ref().map(|p| p.display().to_string()),
        },
    });
    std::fs::write(
        &manifest_file,
        serde_json::to_string_pretty(&manifest).expect("manifest"),
    )?;

    Ok(PipelineOutcome {
        output_dir: config.output_dir.clone(),
        run_file: batch.run_file,
        scores_file,
        report_md,
        report_csv,
        manifest_file,
        trace_csv: batch.trace_csv,
        energy_file: batch.energy_file,
        n_records: batch.entries.len(),
        n_failed,
        total_mwh: batch.trace.as_ref().map(|t| t.total_mwh),
    })
}

/// SHA-256 over the canonical JSON serialization of the config.
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config(dir: &Path) -> RunConfig {
        RunConfig {
            corpus: dir.join("corpus.jsonl"),
            dataset_label: "toy".into(),
            output_dir: dir.join("out"),
            strategy: "brief".into(),
            seed: 7,
            train_pool: None,
            index: None,
            length_model: None,
            external_predictor: None,
            scheme: Scheme::UnicodeWords,
            endpoint: EndpointConfig::new("http://127.0.0.1:9", "mock-model"),
            generation: None,
            energy: EnergyConfig::default(),
        }
    }

    fn write_toy_corpus(path: &Path, n: usize) {
        let mut lines = String::new();
        for i in 0..n {
            lines.push_str(&format!(
                "{{\"id\":\"q{i}\",\"dataset\":\"toy\",\"split\":\"test\",\"question\":\"question {i}?\",\"target_answer\":\"answer {i}\"}}\n"
            ));
        }
        std::fs::write(path, lines).unwrap();
    }

    #[test]
    fn valid_config_has_no_findings() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_corpus(&dir.path().join("corpus.jsonl"), 2);
        let config = minimal_config(dir.path());
        assert_eq!(validate(&config), Vec::new());
    }

    #[test]
    fn missing_corpus_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let config = minimal_config(dir.path());
        let findings = validate(&config);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].field, "corpus");
    }

    #[test]
    fn predreslen_without_model_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_corpus(&dir.path().join("corpus.jsonl"), 2);
        let mut config = minimal_config(dir.path());
        config.strategy = "limit:predreslen".into();
        let findings = validate(&config);
        assert!(
            findings.iter().any(|f| f.field == "length_model"),
            "{findings:?}"
        );
    }

    #[test]
    fn retrieval_strategy_without_index_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_corpus(&dir.path().join("corpus.jsonl"), 2);
        let mut config = minimal_config(dir.path());
        config.strategy = "incontext".into();
        let findings = validate(&config);
        assert!(findings.iter().any(|f| f.field == "index"));
        assert!(findings.iter().any(|f| f.field == "train_pool"));
    }

    #[test]
    fn toml_config_with_energy_sources_parses() {
        let dir = tempfile::tempdir().unwrap();
        let toml_text = format!(
            r#"
corpus = "{}/corpus.jsonl"
output_dir = "{}/out"
strategy = "minans"
seed = 42

[endpoint]
base_url = "http://127.0.0.1:8000"
model = "test-model"
parallelism = 2

[generation]
temperature = 0.0
max_new_tokens = 128

[energy]
interval_secs = 0.05

[[energy.sources]]
kind = "mock"
watts = 100.0

[[energy.sources]]
kind = "mock_ramp"
from_watts = 0.0
to_watts = 50.0
duration_secs = 10.0
"#,
            dir.path().display(),
            dir.path().display(),
        );
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, toml_text).unwrap();
        let config = load_config(&config_path).unwrap();
        assert_eq!(config.strategy, "minans");
        assert_eq!(config.energy.sources.len(), 2);
        assert_eq!(config.endpoint.parallelism, 2);
        assert_eq!(config.generation_params().max_new_tokens, 128);
        assert_eq!(config.generation_params().repetition_penalty, 1.2);
    }

    #[test]
    fn config_hash_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = minimal_config(dir.path());
        let mut b = minimal_config(dir.path());
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 8;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn endpoint_down_fails_in_run_stage() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_corpus(&dir.path().join("corpus.jsonl"), 2);
        let mut config = minimal_config(dir.path());
        config.endpoint.max_retries = 0;
        config.endpoint.timeout_secs = 2.0;
        match run_only(&config) {
            Err(PipelineError::Stage { stage: "run", .. }) => {}
            other => panic!("expected run-stage failure, got {other:?}"),
        }
        // the partial run file is retained for inspection
        let run_file = config.output_dir.join("run.jsonl");
        assert!(run_file.exists());
        let entries = crate::llmclient::read_run_file(&run_file).unwrap();
        assert_eq!(entries.len(), 2);
        assert!(entries.iter().all(|e| e.error.is_some()));
    }

    #[test]
    fn invalid_config_error_lists_findings() {
        let dir = tempfile::tempdir().unwrap();
        let config = minimal_config(dir.path());
        match pipeline(&config) {
            Err(PipelineError::Invalid(findings)) => assert!(!findings.is_empty()),
            other => panic!("expected Invalid, got {other:?}"),
        }
    }
}
