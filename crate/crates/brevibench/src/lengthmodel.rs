//! Supervised prediction of the ideal response length in words.
//!
//! The built-in model is a closed-form ridge regression over hand features
//! of the question/context; heavier learned predictors can be plugged in
//! through [`ExternalPredictor`], a local HTTP hook taking
//! `{"question": ..., "context": ...}` and returning `{"length": <real>}`.
//! Predictions are rounded and clamped to `[1, 2000]`, matching the
//! generation hard cap.
//!
//! Feature order (fixed per schema version 1): bias, question word count,
//! context word count, ln(1 + question word count), eight indicators for the
//! leading interrogative (`what`, `who`, `when`, `where`, `why`, `how`,
//! `which`, and the auxiliary group `is/are/do/does/can`), the number of `?`
//! marks, then one-hot dataset indicators in sorted label order.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, QueryRecord};
use crate::tokenize::{count_tokens, tokenize_normalized, Scheme};

pub const SCHEMA_VERSION: u32 = 1;
pub const PREDICTION_CAP: u32 = 2000;

const WH_WORDS: [&str; 7] = ["what", "who", "when", "where", "why", "how", "which"];
const AUX_WORDS: [&str; 5] = ["is", "are", "do", "does", "can"];

/// Featurizer configuration frozen into a trained model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    /// Sorted dataset labels seen at training time (one-hot positions).
    pub datasets: Vec<String>,
}

impl FeatureSchema {
    pub fn from_pool(pool: &Corpus) -> FeatureSchema {
        let datasets: BTreeSet<String> = pool.records.iter().map(|r| r.dataset.clone()).collect();
        FeatureSchema {
            version: SCHEMA_VERSION,
            datasets: datasets.into_iter().collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        // bias + qw + cw + ln(1+qw) + 8 interrogatives + "?" count
        13 + self.datasets.len()
    }
}

/// Trained ridge model with its schema and training provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthModel {
    pub schema: FeatureSchema,
    pub weights: Vec<f64>,
    pub ridge_lambda: f64,
    pub pool_hash: String,
    pub record_count: usize,
}

#[derive(Debug, Error)]
pub enum LengthModelError {
    #[error("training pool has {got} records but the feature dimension is {dim}; need more data")]
    InsufficientData { got: usize, dim: usize },
    #[error("normal equations are singular; add regularization (lambda > 0)")]
    SingularSystem,
    #[error("record '{0}' has no target_length; fill target lengths before training")]
    MissingTargetLength(String),
    #[error("model schema version {found} does not match featurizer version {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("external predictor request failed: {0}")]
    Endpoint(String),
    #[error("external predictor returned an unusable reply: {0}")]
    MalformedPrediction(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file is not valid JSON: {0}")]
    Format(#[from] serde_json::Error),
}

/// Deterministic feature vector for a record under `schema`. Unknown
/// datasets get an all-zero one-hot block.
pub fn featurize(record: &QueryRecord, schema: &FeatureSchema) -> Vec<f64> {
    let q_words = count_tokens(&record.question, Scheme::Whitespace) as f64;
    let c_words = record
        .context
        .as_deref()
        .map(|c| count_tokens(c, Scheme::Whitespace) as f64)
        .unwrap_or(0.0);
    let mut values = Vec::with_capacity(schema.dimension());
    values.push(1.0);
    values.push(q_words);
    values.push(c_words);
    values.push((1.0 + q_words).ln());

    let first = tokenize_normalized(&record.question, Scheme::UnicodeWords)
        .tokens
        .into_iter()
        .next()
        .unwrap_or_default();
    for wh in WH_WORDS {
        values.push(if first == wh { 1.0 } else { 0.0 });
    }
    values.push(if AUX_WORDS.contains(&first.as_str()) {
        1.0
    } else {
        0.0
    });
    values.push(record.question.matches('?').count() as f64);

    for dataset in &schema.datasets {
        values.push(if *dataset == record.dataset { 1.0 } else { 0.0 });
    }
    values
}

/// Fit the ridge regression `argmin ||Xw - y||² + λ||w||²` (bias
/// unpenalized) by solving the normal equations directly.
#[allow(clippy::needless_range_loop)] // triangular matrix fill wants indices
pub fn train(pool: &Corpus, ridge_lambda: f64) -> Result<LengthModel, LengthModelError> {
    let schema = FeatureSchema::from_pool(pool);
    let dim = schema.dimension();
    if pool.len() <= dim {
        return Err(LengthModelError::InsufficientData {
            got: pool.len(),
            dim,
        });
    }
    let mut xtx = vec![vec![0.0; dim]; dim];
    let mut xty = vec![0.0; dim];
    for record in &pool.records {
        let target = record
            .target_length
            .ok_or_else(|| LengthModelError::MissingTargetLength(record.id.clone()))?
            as f64;
        let x = featurize(record, &schema);
        for i in 0..dim {
            xty[i] += x[i] * target;
            for j in i..dim {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
    }
    for (i, row) in xtx.iter_mut().enumerate().skip(1) {
        row[i] += ridge_lambda;
    }
    let weights = solve_linear(xtx, xty)?;
    Ok(LengthModel {
        schema,
        weights,
        ridge_lambda,
        pool_hash: pool_hash(pool),
        record_count: pool.len(),
    })
}

/// Predicted length for a record: `round(w·x)` clamped to `[1, 2000]`.
pub fn predict(model: &LengthModel, record: &QueryRecord) -> Result<u32, LengthModelError> {
    if model.schema.version != SCHEMA_VERSION {
        return Err(LengthModelError::SchemaMismatch {
            found: model.schema.version,
            expected: SCHEMA_VERSION,
        });
    }
    let x = featurize(record, &model.schema);
    let raw: f64 = model.weights.iter().zip(&x).map(|(w, v)| w * v).sum();
    Ok(clamp_prediction(raw))
}

fn clamp_prediction(raw: f64) -> u32 {
    let rounded = raw.round();
    if rounded < 1.0 {
        1
    } else if rounded > f64::from(PREDICTION_CAP) {
        PREDICTION_CAP
    } else {
        rounded as u32
    }
}

/// MAE and R² of a model over a corpus (records must carry target lengths).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub n: usize,
    pub mae: f64,
    pub r2: f64,
}

pub fn evaluate(model: &LengthModel, corpus: &Corpus) -> Result<EvalStats, LengthModelError> {
    let mut targets = Vec::with_capacity(corpus.len());
    let mut preds = Vec::with_capacity(corpus.len());
    for record in &corpus.records {
        let target = record
            .target_length
            .ok_or_else(|| LengthModelError::MissingTargetLength(record.id.clone()))?
            as f64;
        targets.push(target);
        preds.push(f64::from(predict(model, record)?));
    }
    let n = targets.len();
    let mean = targets.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = targets
        .iter()
        .zip(&preds)
        .map(|(t, p)| (t - p).powi(2))
        .sum();
    let mae = targets
        .iter()
        .zip(&preds)
        .map(|(t, p)| (t - p).abs())
        .sum::<f64>()
        / n as f64;
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(EvalStats { n, mae, r2 })
}

impl LengthModel {
    pub fn save(&self, path: &Path) -> Result<(), LengthModelError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LengthModel, LengthModelError> {
        let model: LengthModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.schema.version != SCHEMA_VERSION {
            return Err(LengthModelError::SchemaMismatch {
                found: model.schema.version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(model)
    }
}

/// HTTP hook for substituting a heavier predictor: POST
/// `{"question", "context"}`, expect `{"length": <real>}` back.
#[derive(Debug, Clone)]
pub struct ExternalPredictor {
    pub url: String,
    pub timeout: Duration,
}

impl ExternalPredictor {
    pub fn new(url: impl Into<String>) -> ExternalPredictor {
        ExternalPredictor {
            url: url.into(),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn predict(&self, record: &QueryRecord) -> Result<u32, LengthModelError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = serde_json::json!({
            "question": record.question,
            "context": record.context,
        });
        let mut response = agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(|e| LengthModelError::Endpoint(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LengthModelError::Endpoint(e.to_string()))?;
        if status != 200 {
            return Err(LengthModelError::Endpoint(format!(
                "status {status}: {text}"
            )));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| LengthModelError::MalformedPrediction(e.to_string()))?;
        let length = value
            .get("length")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| {
                LengthModelError::MalformedPrediction(format!("no numeric \"length\" in {text}"))
            })?;
        Ok(clamp_prediction(length))
    }
}

/// Either the built-in ridge model or an external endpoint.
#[derive(Debug, Clone)]
pub enum LengthPredictor {
    Builtin(LengthModel),
    External(ExternalPredictor),
}

impl LengthPredictor {
    pub fn predict(&self, record: &QueryRecord) -> Result<u32, LengthModelError> {
        match self {
            LengthPredictor::Builtin(model) => predict(model, record),
            LengthPredictor::External(hook) => hook.predict(record),
        }
    }
}

fn pool_hash(pool: &Corpus) -> String {
    let mut hasher = Sha256::new();
    for record in &pool.records {
        hasher.update(record.id.as_bytes());
        hasher.update(b"\t");
        hasher.update(
            record
                .target_length
                .map(|t| t.to_string())
                .unwrap_or_default()
                .as_bytes(),
        );
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Gaussian elimination with partial pivoting; the pivot threshold is
/// relative to the largest entry so large count features do not mask rank
/// deficiency.
#[allow(clippy::needless_range_loop)]
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, LengthModelError> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let threshold = 1e-12 * scale;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < threshold {
            return Err(LengthModelError::SingularSystem);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= a[i][k] * x[k];
        }
        x[i] = sum / a[i][i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, Split};

    fn record_with_question(id: &str, question: &str) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            dataset: "toy".into(),
            split: Split::Train,
            context: None,
            question: question.into(),
            target_answer: String::new(),
            target_length: None,
            extra_answers: Vec::new(),
        }
    }

    /// Pool where target_length = 2 × question word count, with optional
    /// deterministic uniform noise of standard deviation `sigma`.
    fn synthetic_pool(n: usize, sigma: f64, seed: u64) -> Corpus {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        let openers = ["what", "who", "how", "tell", "when", "why"];
        let records = (0..n)
            .map(|i| {
                let words = 3 + (next() % 18) as usize;
                let mut q = vec![openers[(next() % 6) as usize].to_string()];
                for w in 1..words {
                    q.push(format!("w{w}"));
                }
                let question = format!("{}?", q.join(" "));
                let clean = 2.0 * count_tokens(&question, Scheme::Whitespace) as f64;
                // uniform on [-sigma*sqrt(3), sigma*sqrt(3)] has std dev sigma
                let half_width = sigma * 3.0f64.sqrt();
                let noise = if sigma == 0.0 {
                    0.0
                } else {
                    ((next() % 20_001) as f64 / 10_000.0 - 1.0) * half_width
                };
                let mut rec = record_with_question(&format!("s{i}"), &question);
                rec.target_length = Some((clean + noise).round().max(0.0) as u32);
                rec
            })
            .collect();
        Corpus {
            records,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn featurize_flags_interrogative_and_question_marks() {
        let schema = FeatureSchema {
            version: SCHEMA_VERSION,
            datasets: vec!["toy".into()],
        };
        let rec = record_with_question("a", "What is 2 + 2?");
        let x = featurize(&rec, &schema);
        assert_eq!(x[0], 1.0, "bias");
        assert_eq!(x[1], 5.0, "question word count");
        assert_eq!(x[2], 0.0, "no context");
        assert_eq!(x[4], 1.0, "leading 'what' indicator");
        assert_eq!(x[12], 1.0, "one question mark");
        assert_eq!(x[13], 1.0, "dataset one-hot");
        assert_eq!(x.len(), schema.dimension());
        assert_eq!(featurize(&rec, &schema), x, "featurize is deterministic");
    }

    #[test]
    fn featurize_aux_group_and_unknown_dataset() {
        let schema = FeatureSchema {
            version: SCHEMA_VERSION,
            datasets: vec!["other".into()],
        };
        let rec = record_with_question("a", "Is water wet");
        let x = featurize(&rec, &schema);
        assert_eq!(x[11], 1.0, "aux-verb group indicator");
        assert_eq!(x[13], 0.0, "unknown dataset one-hot stays zero");
    }

    #[test]
    fn recovers_exact_linear_rule() {
        let pool = synthetic_pool(200, 0.0, 11);
        let model = train(&pool, 1e-6).unwrap();
        let stats = evaluate(&model, &pool).unwrap();
        assert!(stats.r2 >= 0.99, "r2 = {}", stats.r2);
        let ten = record_with_question("t", "what w1 w2 w3 w4 w5 w6 w7 w8 w9");
        assert_eq!(count_tokens(&ten.question, Scheme::Whitespace), 10);
        assert_eq!(predict(&model, &ten).unwrap(), 20);
    }

    #[test]
    fn constant_targets_predict_the_constant() {
        let mut pool = synthetic_pool(100, 0.0, 3);
        for r in &mut pool.records {
            r.target_length = Some(17);
        }
        let model = train(&pool, 1.0).unwrap();
        let query = record_with_question("q", "completely different words here");
        assert_eq!(predict(&model, &query).unwrap(), 17);
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let pool = synthetic_pool(5, 0.0, 1);
        assert!(matches!(
            train(&pool, 1.0),
            Err(LengthModelError::InsufficientData { .. })
        ));
    }

    #[test]
    fn collinear_features_without_regularization_are_singular() {
        // identical questions make most feature columns proportional
        let records: Vec<QueryRecord> = (0..40)
            .map(|i| {
                let mut r = record_with_question(&format!("s{i}"), "what is this?");
                r.target_length = Some(10);
                r
            })
            .collect();
        let pool = Corpus {
            records,
            provenance: Provenance::default(),
        };
        assert!(matches!(
            train(&pool, 0.0),
            Err(LengthModelError::SingularSystem)
        ));
    }

    #[test]
    fn predictions_clamp_to_range() {
        let schema = FeatureSchema {
            version: SCHEMA_VERSION,
            datasets: Vec::new(),
        };
        let mut weights = vec![0.0; schema.dimension()];
        weights[0] = -3.7;
        let low = LengthModel {
            schema: schema.clone(),
            weights,
            ridge_lambda: 0.0,
            pool_hash: String::new(),
            record_count: 0,
        };
        let rec = record_with_question("r", "hello");
        assert_eq!(predict(&low, &rec).unwrap(), 1);

        let mut weights = vec![0.0; schema.dimension()];
        weights[0] = 5000.0;
        let high = LengthModel {
            schema,
            weights,
            ridge_lambda: 0.0,
            pool_hash: String::new(),
            record_count: 0,
        };
        assert_eq!(predict(&high, &rec).unwrap(), 2000);
    }

    #[test]
    fn schema_version_mismatch_is_rejected() {
        let model = LengthModel {
            schema: FeatureSchema {
                version: SCHEMA_VERSION + 1,
                datasets: Vec::new(),
            },
            weights: vec![0.0; 13],
            ridge_lambda: 0.0,
            pool_hash: String::new(),
            record_count: 0,
        };
        let rec = record_with_question("r", "hello");
        assert!(matches!(
            predict(&model, &rec),
            Err(LengthModelError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn saved_model_predicts_identically() {
        let pool = synthetic_pool(150, 2.0, 5);
        let model = train(&pool, 1.0).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        model.save(file.path()).unwrap();
        let loaded = LengthModel::load(file.path()).unwrap();
        assert_eq!(model, loaded);
        for record in &pool.records {
            assert_eq!(
                predict(&model, record).unwrap(),
                predict(&loaded, record).unwrap()
            );
        }
    }

    #[test]
    fn noisy_fit_generalizes_to_held_out_data() {
        let train_pool = synthetic_pool(400, 2.0, 21);
        let held_out = synthetic_pool(200, 2.0, 99);
        let model = train(&train_pool, 1.0).unwrap();
        let stats = evaluate(&model, &held_out).unwrap();
        assert!(stats.r2 >= 0.9, "held-out r2 = {}", stats.r2);
    }

    #[test]
    fn fit_never_loses_to_best_constant() {
        let pool = synthetic_pool(250, 2.0, 42);
        let model = train(&pool, 1e-6).unwrap();
        let targets: Vec<f64> = pool
            .records
            .iter()
            .map(|r| f64::from(r.target_length.unwrap()))
            .collect();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let constant_sse: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
        let model_sse: f64 = pool
            .records
            .iter()
            .map(|r| {
                let p = f64::from(predict(&model, r).unwrap());
                (f64::from(r.target_length.unwrap()) - p).powi(2)
            })
            .sum();
        // integer rounding of predictions can cost at most 0.25 per sample
        assert!(
            model_sse <= constant_sse + 0.25 * targets.len() as f64,
            "model sse {model_sse} vs constant sse {constant_sse}"
        );
    }
}
