//! OpenAI-compatible completion client with an on-disk response cache,
//! retry backoff, and bounded batch concurrency.
//!
//! Requests go to `{base_url}/v1/chat/completions` with the prompt as a
//! single user message. Sampler settings follow the harness defaults:
//! greedy decoding (temperature 0), a 2048-token generation cap, and a 1.2
//! repetition penalty. The penalty is sent as a top-level
//! `repetition_penalty` extension field; backends that reject unknown
//! fields can be configured to receive `frequency_penalty = 0.2` instead.
//!
//! The cache is an append-only JSONL store keyed by a SHA-256 of
//! `(model, prompt, generation params)`. Entries keep the raw server body
//! for audit plus the original request window, so re-running a batch
//! replays identical records without issuing any HTTP calls.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::promptengine::{build_prompt, PromptDeps, PromptSpec, Strategy};
use crate::tokenize::{count_tokens, Scheme};

/// Connection settings for one endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Upper bound on concurrently in-flight requests during a batch.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Base of the exponential retry backoff, in milliseconds.
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Whether the backend accepts a top-level `repetition_penalty` field.
    #[serde(default = "default_true")]
    pub repetition_penalty_supported: bool,
}

fn default_timeout_secs() -> f64 {
    120.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_true() -> bool {
    true
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> EndpointConfig {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            parallelism: default_parallelism(),
            retry_backoff_ms: default_backoff_ms(),
            repetition_penalty_supported: true,
        }
    }
}

/// Generation parameters; defaults match the harness measurement setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_repetition_penalty")]
    pub repetition_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_max_new_tokens() -> u32 {
    2048
}
fn default_repetition_penalty() -> f64 {
    1.2
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.0,
            max_new_tokens: 2048,
            repetition_penalty: 1.2,
            seed: None,
        }
    }
}

/// One completed generation. `cache_hit` and `retries` are in-memory
/// diagnostics and are not serialized, so run files are reproducible from
/// the cache byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub strategy: String,
    pub prompt_text: String,
    pub response_text: String,
    pub prompt_tokens: usize,
    pub response_tokens: usize,
    pub scheme: Scheme,
    /// Unix seconds bracketing the original network call.
    pub started_at: f64,
    pub finished_at: f64,
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(skip)]
    pub cache_hit: bool,
    #[serde(skip)]
    pub retries: u32,
}

/// One line of a run file: a generation or a per-record error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub id: String,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("http {status}: {excerpt}")]
    HttpError { status: u16, excerpt: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("retries exhausted after {attempts} retries: {source}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        source: Box<ClientError>,
    },
    #[error("auth env var {0} is not set")]
    MissingAuthToken(String),
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
    #[error("run file line {line}: {reason}")]
    RunFileFormat { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn is_retryable(error: &ClientError) -> bool {
    match error {
        ClientError::EndpointUnreachable(_) => true,
        ClientError::HttpError { status, .. } => *status >= 500,
        _ => false,
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs_f64()
}

fn excerpt(text: &str) -> String {
    const LIMIT: usize = 200;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let mut cut = LIMIT;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        format!("{}…", &text[..cut])
    }
}

/// Stable cache key over everything that determines a completion.
pub fn cache_key(model: &str, prompt_text: &str, params: &GenParams) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0]);
    hasher.update(prompt_text.as_bytes());
    hasher.update([0]);
    hasher.update(
        serde_json::to_string(params)
            .expect("params serialize")
            .as_bytes(),
    );
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    finish_reason: Option<String>,
    started_at: f64,
    finished_at: f64,
    /// Full raw server body, kept for audit.
    raw_response: String,
}

struct CacheInner {
    map: HashMap<String, CacheEntry>,
    file: File,
}

/// Append-only on-disk response cache with in-memory lookups.
pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<CacheInner>,
    skipped_lines: usize,
}

impl ResponseCache {
    /// Open (or create) a cache file, loading all existing entries.
    /// Torn or corrupt lines (e.g. from a killed run) are skipped and
    /// counted, never fatal.
    pub fn open(path: &Path) -> Result<ResponseCache, ClientError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut map = HashMap::new();
        let mut skipped = 0usize;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        map.insert(entry.key.clone(), entry);
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ResponseCache {
            path: path.to_path_buf(),
            inner: Mutex::new(CacheInner { map, file }),
            skipped_lines: skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corrupt lines dropped while loading.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    fn get(&self, key: &str) -> Option<CacheEntry> {
        self.inner.lock().unwrap().map.get(key).cloned()
    }

    fn put(&self, entry: CacheEntry) -> Result<(), ClientError> {
        let line = serde_json::to_string(&entry).expect("cache entry serializes");
        let mut inner = self.inner.lock().unwrap();
        writeln!(inner.file, "{line}")?;
        inner.file.flush()?;
        inner.map.insert(entry.key.clone(), entry);
        Ok(())
    }
}

struct RawCompletion {
    response_text: String,
    finish_reason: Option<String>,
    started_at: f64,
    finished_at: f64,
    retries: u32,
    cache_hit: bool,
}

fn resolve_auth(cfg: &EndpointConfig) -> Result<Option<String>, ClientError> {
    match &cfg.auth_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(Some)
            .map_err(|_| ClientError::MissingAuthToken(var.clone())),
    }
}

fn request_body(cfg: &EndpointConfig, params: &GenParams, prompt_text: &str) -> String {
    let mut body = serde_json::json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt_text}],
        "temperature": params.temperature,
        "max_tokens": params.max_new_tokens,
    });
    if let Some(seed) = params.seed {
        body["seed"] = seed.into();
    }
    if cfg.repetition_penalty_supported {
        body["repetition_penalty"] = params.repetition_penalty.into();
    } else {
        // the base OpenAI schema has no repetition_penalty knob
        body["frequency_penalty"] = 0.2.into();
        static WARN: std::sync::Once = std::sync::Once::new();
        WARN.call_once(|| {
            eprintln!(
                "warning: backend does not accept repetition_penalty; \
                 sending frequency_penalty=0.2 instead"
            );
        });
    }
    body.to_string()
}

fn send_once(
    agent: &ureq::Agent,
    url: &str,
    auth: Option<&str>,
    body: &str,
) -> Result<String, ClientError> {
    let mut request = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = auth {
        request = request.header("Authorization", format!("Bearer {token}"));
    }
    let mut response = request
        .send(body)
        .map_err(|e| ClientError::EndpointUnreachable(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| ClientError::EndpointUnreachable(e.to_string()))?;
    if status != 200 {
        return Err(ClientError::HttpError {
            status,
            excerpt: excerpt(&text),
        });
    }
    Ok(text)
}

fn parse_completion(raw: &str) -> Result<(String, Option<String>), ClientError> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| ClientError::MalformedResponse(format!("{e}; body: {}", excerpt(raw))))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ClientError::MalformedResponse(format!("no choices in {}", excerpt(raw))))?;
    let content = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(serde_json::Value::as_str)
        .ok_or_else(|| {
            ClientError::MalformedResponse(format!("no message.content in {}", excerpt(raw)))
        })?;
    let finish_reason = choice
        .get("finish_reason")
        .and_then(serde_json::Value::as_str)
        .map(str::to_owned);
    Ok((content.to_string(), finish_reason))
}

fn complete_raw(
    cfg: &EndpointConfig,
    params: &GenParams,
    prompt_text: &str,
    cache: &ResponseCache,
) -> Result<RawCompletion, ClientError> {
    let key = cache_key(&cfg.model, prompt_text, params);
    if let Some(entry) = cache.get(&key) {
        return Ok(RawCompletion {
            response_text: entry.response_text,
            finish_reason: entry.finish_reason,
            started_at: entry.started_at,
            finished_at: entry.finished_at,
            retries: 0,
            cache_hit: true,
        });
    }

    let auth = resolve_auth(cfg)?;
    let body = request_body(cfg, params, prompt_text);
    let url = format!("{}/v1/chat/completions", cfg.base_url.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();

    let started_at = unix_now();
    let mut retries = 0u32;
    let raw = loop {
        match send_once(&agent, &url, auth.as_deref(), &body) {
            Ok(raw) => break raw,
            Err(e) if !is_retryable(&e) => return Err(e),
            Err(e) if retries >= cfg.max_retries => {
                return Err(if retries == 0 {
                    e
                } else {
                    ClientError::RetriesExhausted {
                        attempts: retries,
                        source: Box::new(e),
                    }
                })
            }
            Err(_) => {
                retries += 1;
                let backoff = cfg
                    .retry_backoff_ms
                    .saturating_mul(1 << (retries - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
        }
    };
    let finished_at = unix_now();
    let (response_text, finish_reason) = parse_completion(&raw)?;
    cache.put(CacheEntry {
        key,
        response_text: response_text.clone(),
        finish_reason: finish_reason.clone(),
        started_at,
        finished_at,
        raw_response: raw,
    })?;
    Ok(RawCompletion {
        response_text,
        finish_reason,
        started_at,
        finished_at,
        retries,
        cache_hit: false,
    })
}

/// Run one completion, consulting the cache first.
pub fn generate(
    cfg: &EndpointConfig,
    params: &GenParams,
    prompt: &PromptSpec,
    scheme: Scheme,
    cache: &ResponseCache,
) -> Result<GenerationRecord, ClientError> {
    let raw = complete_raw(cfg, params, &prompt.prompt_text, cache)?;
    Ok(GenerationRecord {
        id: prompt.record_id.clone(),
        strategy: prompt.strategy.label(),
        prompt_text: prompt.prompt_text.clone(),
        response_text: raw.response_text.clone(),
        prompt_tokens: count_tokens(&prompt.prompt_text, scheme),
        response_tokens: count_tokens(&raw.response_text, scheme),
        scheme,
        started_at: raw.started_at,
        finished_at: raw.finished_at,
        endpoint: cfg.base_url.clone(),
        model: cfg.model.clone(),
        finish_reason: raw.finish_reason,
        cache_hit: raw.cache_hit,
        retries: raw.retries,
    })
}

/// Generate a response for every corpus record under one strategy.
///
/// Prompts are built serially (deterministic), requests run on a worker
/// pool capped at `cfg.parallelism`, and the returned entries are in corpus
/// order regardless of completion order. Per-record failures become error
/// entries; only configuration problems abort the batch. Completed
/// responses land in the cache immediately, so an interrupted batch resumes
/// from where it stopped.
pub fn run_batch(
    corpus: &Corpus,
    strategy: &Strategy,
    cfg: &EndpointConfig,
    params: &GenParams,
    deps: &PromptDeps,
    cache: &ResponseCache,
    scheme: Scheme,
) -> Result<Vec<RunEntry>, ClientError> {
    if cfg.parallelism == 0 {
        return Err(ClientError::InvalidConfig(
            "parallelism must be at least 1".into(),
        ));
    }
    if cfg.timeout_secs <= 0.0 {
        return Err(ClientError::InvalidConfig(
            "timeout must be positive".into(),
        ));
    }
    strategy
        .validate()
        .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
    // fail fast on a misconfigured auth env var instead of once per record
    resolve_auth(cfg)?;

    let label = strategy.label();
    let mut entries: Vec<Option<RunEntry>> = Vec::with_capacity(corpus.len());
    let mut jobs: VecDeque<(usize, PromptSpec)> = VecDeque::new();
    for (i, record) in corpus.records.iter().enumerate() {
        match build_prompt(record, strategy, deps) {
            Ok(spec) => {
                entries.push(None);
                jobs.push_back((i, spec));
            }
            Err(e) => entries.push(Some(RunEntry {
                id: record.id.clone(),
                strategy: label.clone(),
                generation: None,
                error: Some(e.to_string()),
            })),
        }
    }

    let workers = cfg.parallelism.min(jobs.len().max(1));
    let jobs = Mutex::new(jobs);
    let results: Mutex<Vec<Option<RunEntry>>> = Mutex::new(entries);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = jobs.lock().unwrap().pop_front();
                let Some((index, spec)) = job else { break };
                let entry = match generate(cfg, params, &spec, scheme, cache) {
                    Ok(record) => RunEntry {
                        id: record.id.clone(),
                        strategy: record.strategy.clone(),
                        generation: Some(record),
                        error: None,
                    },
                    Err(e) => RunEntry {
                        id: spec.record_id.clone(),
                        strategy: label.clone(),
                        generation: None,
                        error: Some(e.to_string()),
                    },
                };
                results.lock().unwrap()[index] = Some(entry);
            });
        }
    });

    let entries = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|e| e.expect("every record produced an entry"))
        .collect();
    Ok(entries)
}

/// Write run entries as JSONL.
pub fn write_run_file(entries: &[RunEntry], path: &Path) -> Result<(), ClientError> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for entry in entries {
        writeln!(
            out,
            "{}",
            serde_json::to_string(entry).expect("entry serializes")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_run_file(path: &Path) -> Result<Vec<RunEntry>, ClientError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| ClientError::RunFileFormat {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Minimal completion capability for callers that only need text back
/// (e.g. automatic response categorization).
pub trait TextCompleter {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

/// [`TextCompleter`] backed by an endpoint and cache.
pub struct EndpointCompleter<'a> {
    pub cfg: &'a EndpointConfig,
    pub params: &'a GenParams,
    pub cache: &'a ResponseCache,
}

impl TextCompleter for EndpointCompleter<'_> {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        Ok(complete_raw(self.cfg, self.params, prompt, self.cache)?.response_text)
    }
}
