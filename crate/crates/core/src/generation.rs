//! Text-to-image model and prefilter scorer adapters, with a deterministic
//! simulated model whose images carry hidden pass/fail bits.

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::verdict::Verdict;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("image model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("model returned {got} images, {wanted} requested")]
    PartialBatch { wanted: usize, got: usize },
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("invalid fault spec: {0}")]
    InvalidFaultSpec(String),
    #[error("n_x must be at least 1")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub prompt_id: String,
    pub sample_index: usize,
    /// Simulated ground truth; stored with the session, never sent to clients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_pass: Option<bool>,
}

impl ImageRef {
    pub fn is_simulated(&self) -> bool {
        self.hidden_pass.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerRule {
    /// Every token must occur as a whole word (case-insensitive).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
    /// Regular expression searched in the prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub fail_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    #[serde(default)]
    pub triggers: Vec<TriggerRule>,
    #[serde(default = "one")]
    pub base_pass: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for FaultSpec {
    fn default() -> Self {
        FaultSpec {
            triggers: Vec::new(),
            base_pass: 1.0,
            seed: 0,
        }
    }
}

impl FaultSpec {
    pub fn from_json(text: &str) -> Result<Self, GenerationError> {
        let spec: FaultSpec = serde_json::from_str(text).map_err(|e| GenerationError::InvalidFaultSpec(e.to_string()))?;
        spec.compile()?;
        Ok(spec)
    }

    pub fn compile(&self) -> Result<FaultModel, GenerationError> {
        let prob = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(GenerationError::InvalidFaultSpec(format!("{what} {p} outside [0, 1]")))
            }
        };
        prob(self.base_pass, "base_pass")?;
        let mut rules = Vec::new();
        for (i, t) in self.triggers.iter().enumerate() {
            prob(t.fail_prob, "fail_prob")?;
            let matcher = match (&t.pattern, t.tokens.is_empty()) {
                (Some(p), true) => Matcher::Pattern(
                    Regex::new(p).map_err(|e| GenerationError::InvalidFaultSpec(format!("trigger {i}: {e}")))?,
                ),
                (None, false) => Matcher::Tokens(t.tokens.iter().map(|s| s.to_lowercase()).collect()),
                _ => {
                    return Err(GenerationError::InvalidFaultSpec(format!(
                        "trigger {i} needs exactly one of tokens or pattern"
                    )))
                }
            };
            rules.push((matcher, t.fail_prob));
        }
        Ok(FaultModel {
            rules,
            base_pass: self.base_pass,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Tokens(Vec<String>),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, words: &[String], prompt: &str) -> bool {
        match self {
            Matcher::Tokens(tokens) => tokens.iter().all(|t| words.contains(t)),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

/// A compiled [`FaultSpec`].
#[derive(Debug, Clone)]
pub struct FaultModel {
    rules: Vec<(Matcher, f64)>,
    base_pass: f64,
    seed: u64,
}

pub fn prompt_words(prompt: &str) -> Vec<String> {
    prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl FaultModel {
    /// Whether any trigger rule fires on `prompt`.
    pub fn triggered(&self, prompt: &str) -> bool {
        let words = prompt_words(prompt);
        self.rules.iter().any(|(m, _)| m.matches(&words, prompt))
    }

    /// Per-image pass probability: base rate times the survival odds of every
    /// matching rule.
    pub fn pass_probability(&self, prompt: &str) -> f64 {
        let words = prompt_words(prompt);
        self.rules
            .iter()
            .filter(|(m, _)| m.matches(&words, prompt))
            .fold(self.base_pass, |p, (_, fail)| p * (1.0 - fail))
    }

    /// Deterministic hidden bit for one sample of one prompt.
    pub fn hidden_pass(&self, prompt: &str, sample_index: usize) -> bool {
        let p = self.pass_probability(prompt);
        let mut rng = seeded_rng(&[&self.seed.to_le_bytes(), prompt.as_bytes(), &(sample_index as u64).to_le_bytes()]);
        rng.gen::<f64>() < p
    }
}

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub trait ImageModel: Send + Sync {
    fn generate(&self, prompt_id: &str, prompt: &str, n_x: usize) -> Result<Vec<ImageRef>, GenerationError>;
}

pub trait Scorer: Send + Sync {
    fn score(&self, prompt: &str, image: &ImageRef) -> Result<f64, GenerationError>;
}

#[derive(Debug, Clone)]
pub struct SimulatedModel {
    faults: FaultModel,
}

impl SimulatedModel {
    pub fn new(spec: &FaultSpec) -> Result<Self, GenerationError> {
        Ok(SimulatedModel { faults: spec.compile()? })
    }

    pub fn faults(&self) -> &FaultModel {
        &self.faults
    }
}

impl ImageModel for SimulatedModel {
    fn generate(&self, prompt_id: &str, prompt: &str, n_x: usize) -> Result<Vec<ImageRef>, GenerationError> {
        if n_x == 0 {
            return Err(GenerationError::EmptyBatch);
        }
        Ok((0..n_x)
            .map(|i| ImageRef {
                id: format!("sim:{prompt_id}:{i}"),
                uri: format!("sim://{prompt_id}/{i}"),
                prompt_id: prompt_id.to_string(),
                sample_index: i,
                hidden_pass: Some(self.faults.hidden_pass(prompt, i)),
            })
            .collect())
    }
}

/// The evaluator used in simulated sessions: reads the hidden bit.
pub fn simulated_verdict(image: &ImageRef) -> Option<Verdict> {
    image.hidden_pass.map(Verdict::from_pass)
}

/// Scores 1.0 for hidden passes and 0.0 for hidden fails, flipping each score
/// with probability `noise`.
#[derive(Debug, Clone)]
pub struct SimScorer {
    pub noise: f64,
    pub seed: u64,
}

impl Scorer for SimScorer {
    fn score(&self, _prompt: &str, image: &ImageRef) -> Result<f64, GenerationError> {
        let hidden = image
            .hidden_pass
            .ok_or_else(|| GenerationError::ScorerUnavailable("image has no simulated ground truth".into()))?;
        let mut rng = seeded_rng(&[b"score", &self.seed.to_le_bytes(), image.id.as_bytes()]);
        let flip = rng.gen::<f64>() < self.noise;
        Ok(if hidden != flip { 1.0 } else { 0.0 })
    }
}

fn http_client(timeout_secs: f64) -> Result<reqwest::blocking::Client, String> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(timeout_secs))
        .build()
        .map_err(|e| e.to_string())
}

fn post_json(client: &reqwest::blocking::Client, url: &str, body: &Value) -> Result<Value, String> {
    let resp = client.post(url).json(body).send().map_err(|e| e.to_string())?;
    let status = resp.status();
    if !status.is_success() {
        return Err(format!("endpoint returned {status}"));
    }
    resp.json().map_err(|e| format!("bad response body: {e}"))
}

/// Posts `{prompt, n, seed?}` and expects `{refs: [...]}` where each ref is a
/// string or an object with a `uri`/`url` field.
#[derive(Debug)]
pub struct HttpModel {
    client: reqwest::blocking::Client,
    endpoint: String,
    seed: Option<u64>,
}

impl HttpModel {
    pub fn new(endpoint: impl Into<String>, seed: Option<u64>, timeout_secs: f64) -> Result<Self, GenerationError> {
        Ok(HttpModel {
            client: http_client(timeout_secs).map_err(GenerationError::ModelUnavailable)?,
            endpoint: endpoint.into(),
            seed,
        })
    }
}

impl ImageModel for HttpModel {
    fn generate(&self, prompt_id: &str, prompt: &str, n_x: usize) -> Result<Vec<ImageRef>, GenerationError> {
        if n_x == 0 {
            return Err(GenerationError::EmptyBatch);
        }
        let mut body = json!({"prompt": prompt, "n": n_x});
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        let value = post_json(&self.client, &self.endpoint, &body).map_err(GenerationError::ModelUnavailable)?;
        let refs = value["refs"]
            .as_array()
            .ok_or_else(|| GenerationError::ModelUnavailable("response has no refs list".into()))?;
        let uris: Vec<String> = refs
            .iter()
            .filter_map(|r| {
                r.as_str()
                    .or_else(|| r["uri"].as_str())
                    .or_else(|| r["url"].as_str())
                    .map(str::to_string)
            })
            .collect();
        if uris.len() != n_x {
            return Err(GenerationError::PartialBatch {
                wanted: n_x,
                got: uris.len(),
            });
        }
        Ok(uris
            .into_iter()
            .enumerate()
            .map(|(i, uri)| ImageRef {
                id: format!("{prompt_id}:{i}"),
                uri,
                prompt_id: prompt_id.to_string(),
                sample_index: i,
                hidden_pass: None,
            })
            .collect())
    }
}

/// Posts `{prompt, ref}` and expects `{score}`.
#[derive(Debug)]
pub struct HttpScorer {
    client: reqwest::blocking::Client,
    endpoint: String,
}

impl HttpScorer {
    pub fn new(endpoint: impl Into<String>, timeout_secs: f64) -> Result<Self, GenerationError> {
        Ok(HttpScorer {
            client: http_client(timeout_secs).map_err(GenerationError::ScorerUnavailable)?,
            endpoint: endpoint.into(),
        })
    }
}

impl Scorer for HttpScorer {
    fn score(&self, prompt: &str, image: &ImageRef) -> Result<f64, GenerationError> {
        let value = post_json(&self.client, &self.endpoint, &json!({"prompt": prompt, "ref": image.uri}))
            .map_err(GenerationError::ScorerUnavailable)?;
        value["score"]
            .as_f64()
            .ok_or_else(|| GenerationError::ScorerUnavailable("response has no numeric score".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrefilterOutcome {
    /// One entry per image: true when the pair is provisionally failed.
    pub provisional_fail: Vec<bool>,
    pub scores: Vec<Option<f64>>,
    pub warning: Option<String>,
}

/// Marks pairs scoring below `threshold` as provisional fails. A threshold of
/// zero or less disables scoring. When the scorer fails, nothing is marked
/// and a warning is returned instead.
pub fn prefilter(scorer: Option<&dyn Scorer>, prompt: &str, images: &[ImageRef], threshold: f64) -> PrefilterOutcome {
    let unmarked = |warning: Option<String>| PrefilterOutcome {
        provisional_fail: vec![false; images.len()],
        scores: vec![None; images.len()],
        warning,
    };
    let Some(scorer) = scorer else {
        return unmarked(None);
    };
    if threshold <= 0.0 {
        return unmarked(None);
    }
    let mut scores = Vec::with_capacity(images.len());
    for img in images {
        match scorer.score(prompt, img) {
            Ok(s) => scores.push(s),
            Err(e) => return unmarked(Some(e.to_string())),
        }
    }
    PrefilterOutcome {
        provisional_fail: scores.iter().map(|s| *s < threshold).collect(),
        scores: scores.into_iter().map(Some).collect(),
        warning: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Simulated {
        #[serde(default)]
        fault_spec: FaultSpec,
    },
    Http {
        endpoint: String,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Simulated {
            fault_spec: FaultSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerConfig {
    #[default]
    None,
    Simulated {
        #[serde(default)]
        noise: f64,
    },
    Http {
        endpoint: String,
    },
}

pub fn build_model(config: &ModelConfig, timeout_secs: f64) -> Result<Arc<dyn ImageModel>, GenerationError> {
    Ok(match config {
        ModelConfig::Simulated { fault_spec } => Arc::new(SimulatedModel::new(fault_spec)?),
        ModelConfig::Http { endpoint, seed } => Arc::new(HttpModel::new(endpoint.clone(), *seed, timeout_secs)?),
    })
}

pub fn build_scorer(
    config: &ScorerConfig,
    model: &ModelConfig,
    timeout_secs: f64,
) -> Result<Option<Arc<dyn Scorer>>, GenerationError> {
    Ok(match config {
        ScorerConfig::None => None,
        ScorerConfig::Simulated { noise } => {
            let seed = match model {
                ModelConfig::Simulated { fault_spec } => fault_spec.seed,
                ModelConfig::Http { .. } => 0,
            };
            Some(Arc::new(SimScorer { noise: *noise, seed }))
        }
        ScorerConfig::Http { endpoint } => Some(Arc::new(HttpScorer::new(endpoint.clone(), timeout_secs)?)),
    })
}
