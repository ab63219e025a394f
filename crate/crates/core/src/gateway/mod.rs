//! LLM-backed generation behind one interface: topics, inputs, reflections
//! and text/scene-graph conversion.

mod dedup;
mod http;
mod mock;
mod template;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene_graph::{parse_scene_graph, SceneGraph, SceneGraphError};

pub use dedup::{dedup_ngram, jaccard, ngrams, DEFAULT_NGRAM, DEFAULT_THRESHOLD};
pub use http::HttpBackend;
pub use mock::{prompt_digest, MockBackend, MockFixtures, TopicFixture, Vocabulary};
pub use template::{
    output_slots, parse_labeled, render, render_records, word_count, RecordLine, TemplateId, EMPTY_RECORDS,
    INPUT_LABEL, MAX_INPUT_WORDS, TOPIC_LABEL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("LLM backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("wanted {wanted} outputs, got {got} after retries")]
    InsufficientOutputs { wanted: usize, got: usize },
    #[error("template placeholder {{{0}}} has no value")]
    UnresolvedPlaceholder(String),
    #[error("mock fixtures have no response for {key}")]
    FixtureGap {
        template: String,
        key: String,
        topic: Option<String>,
    },
    #[error("malformed LLM reply: {0}")]
    MalformedReply(String),
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error("reflection needs at least one failing record")]
    NoFailures,
    #[error("input text is empty")]
    EmptyInput,
    #[error(transparent)]
    SceneGraph(#[from] SceneGraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Real,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the API key for the real backend.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub dedup_n: usize,
    pub dedup_threshold: f64,
    /// Mock fixture file; the bundled table is used when unset.
    pub fixtures: Option<PathBuf>,
    /// Mixed into the mock backend's per-prompt randomness; 0 leaves replies
    /// a pure function of the prompt.
    pub mock_sampling_seed: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: BackendKind::Mock,
            endpoint: None,
            model: String::new(),
            api_key_env: "TREEVAL_LLM_API_KEY".into(),
            temperature: 0.7,
            max_retries: 3,
            timeout_secs: 60.0,
            dedup_n: DEFAULT_NGRAM,
            dedup_threshold: DEFAULT_THRESHOLD,
            fixtures: None,
            mock_sampling_seed: 0,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.dedup_n == 0 {
            return Err(GatewayError::InvalidConfig("dedup n must be at least 1".into()));
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return Err(GatewayError::InvalidConfig("dedup threshold must be in (0, 1]".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(GatewayError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub template: TemplateId,
    pub prompt: String,
    pub vars: BTreeMap<String, String>,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError>;

    /// Whether generated inputs get an extra yes/no topic-relevance check.
    fn verifies_relevance(&self) -> bool {
        false
    }
}

/// Records and reflection of the node whose context conditions a request.
#[derive(Debug, Clone, Copy, Default)]
pub struct NodeContext<'a> {
    pub records: &'a [RecordLine],
    pub reflection: Option<&'a str>,
}

pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    config: GatewayConfig,
    calls: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>, config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Gateway {
            backend,
            config,
            calls: AtomicU64::new(0),
        })
    }

    pub fn from_config(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn LlmBackend> = match config.backend {
            BackendKind::Real => Arc::new(HttpBackend::new(&config)?),
            BackendKind::Mock => match &config.fixtures {
                Some(path) => Arc::new(MockBackend::with_sampling_seed(
                    MockFixtures::from_file(path)?,
                    config.mock_sampling_seed,
                )),
                None => Arc::new(MockBackend::with_sampling_seed(MockFixtures::bundled(), config.mock_sampling_seed)),
            },
        };
        Self::new(backend, config)
    }

    pub fn mock(fixtures: MockFixtures) -> Self {
        Self::new(Arc::new(MockBackend::new(fixtures)), GatewayConfig::default()).expect("default config is valid")
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Number of backend calls made so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn call(&self, template: TemplateId, vars: BTreeMap<String, String>, note: &str) -> Result<String, GatewayError> {
        let mut prompt = render(template, &vars)?;
        prompt.push_str(note);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.backend.complete(&CompletionRequest { template, prompt, vars })
    }

    /// Repeats the enumerated-output request until `n` acceptable, distinct
    /// values are collected. Retries tell the model what was already taken.
    fn collect<F>(
        &self,
        template: TemplateId,
        label: &str,
        vars: BTreeMap<String, String>,
        n: usize,
        existing: &[String],
        mut accept: F,
    ) -> Result<Vec<String>, GatewayError>
    where
        F: FnMut(&str) -> Result<bool, GatewayError>,
    {
        let mut kept: Vec<String> = Vec::new();
        for _attempt in 0..=self.config.max_retries {
            let note = if kept.is_empty() {
                String::new()
            } else {
                let listed: Vec<String> = kept.iter().map(|k| format!("- {k}")).collect();
                format!("\nAlready accepted, propose different ones:\n{}", listed.join("\n"))
            };
            let reply = self.call(template, vars.clone(), &note)?;
            let mut candidates = Vec::new();
            for c in parse_labeled(&reply, label) {
                if accept(&c)? {
                    candidates.push(c);
                }
            }
            let mut seen: Vec<String> = existing.to_vec();
            seen.extend(kept.iter().cloned());
            let fresh = dedup_ngram(&candidates, &seen, self.config.dedup_n, self.config.dedup_threshold);
            kept.extend(fresh);
            if kept.len() >= n {
                kept.truncate(n);
                return Ok(kept);
            }
        }
        Err(GatewayError::InsufficientOutputs {
            wanted: n,
            got: kept.len(),
        })
    }

    fn context_vars(topic: &str, ctx: &NodeContext<'_>) -> BTreeMap<String, String> {
        let mut vars = BTreeMap::new();
        vars.insert("current topic".to_string(), topic.to_string());
        vars.insert("test records".to_string(), render_records(ctx.records));
        vars.insert(
            "reflection".to_string(),
            ctx.reflection
                .filter(|r| !r.trim().is_empty())
                .unwrap_or(EMPTY_RECORDS)
                .to_string(),
        );
        vars
    }

    pub fn generate_topics(&self, topic: &str, ctx: &NodeContext<'_>, n_t: usize) -> Result<Vec<String>, GatewayError> {
        if n_t == 0 {
            return Err(GatewayError::InvalidConfig("n_t must be at least 1".into()));
        }
        let mut vars = Self::context_vars(topic, ctx);
        vars.insert("n_t".into(), n_t.to_string());
        vars.insert("output slots".into(), output_slots(TOPIC_LABEL, n_t));
        self.collect(TemplateId::Topic, TOPIC_LABEL, vars, n_t, &[], |_| Ok(true))
    }

    /// `prior` holds every input already used in the session; new inputs are
    /// deduplicated against it as well as against each other.
    pub fn generate_inputs(
        &self,
        topic: &str,
        parent: &NodeContext<'_>,
        n_i: usize,
        prior: &[String],
    ) -> Result<Vec<String>, GatewayError> {
        if n_i == 0 {
            return Err(GatewayError::InvalidConfig("n_i must be at least 1".into()));
        }
        let mut vars = Self::context_vars(topic, parent);
        vars.insert("n_i".into(), n_i.to_string());
        vars.insert("output slots".into(), output_slots(INPUT_LABEL, n_i));
        let verify = self.backend.verifies_relevance();
        self.collect(TemplateId::Input, INPUT_LABEL, vars, n_i, prior, |c| {
            if word_count(c) > MAX_INPUT_WORDS {
                return Ok(false);
            }
            if verify {
                return self.is_relevant(topic, c);
            }
            Ok(true)
        })
    }

    fn is_relevant(&self, topic: &str, input: &str) -> Result<bool, GatewayError> {
        let vars = BTreeMap::from([
            ("current topic".to_string(), topic.to_string()),
            ("test input".to_string(), input.to_string()),
        ]);
        let reply = self.call(TemplateId::Relevance, vars, "")?;
        Ok(reply.trim_start().to_lowercase().starts_with("yes"))
    }

    pub fn reflect(&self, topic: &str, records: &[RecordLine]) -> Result<String, GatewayError> {
        if !records.iter().any(|r| r.score == 0 && !r.fragment) {
            return Err(GatewayError::NoFailures);
        }
        let vars = BTreeMap::from([
            ("current topic".to_string(), topic.to_string()),
            ("test records".to_string(), render_records(records)),
        ]);
        let reply = self.call(TemplateId::Reflection, vars, "")?;
        if reply.trim().is_empty() {
            return Err(GatewayError::MalformedReply("empty reflection".into()));
        }
        Ok(reply)
    }

    pub fn text_to_scene_graph(&self, text: &str) -> Result<SceneGraph, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let vars = BTreeMap::from([("test input".to_string(), text.to_string())]);
        let mut last = String::new();
        for _ in 0..=self.config.max_retries {
            let reply = self.call(TemplateId::TextToSg, vars.clone(), "")?;
            let doc = match (reply.find('{'), reply.rfind('}')) {
                (Some(a), Some(b)) if a < b => &reply[a..=b],
                _ => reply.as_str(),
            };
            match parse_scene_graph(doc) {
                Ok(g) if !g.is_empty() => return Ok(g),
                Ok(_) => last = "empty scene graph".into(),
                Err(e) => last = e.to_string(),
            }
        }
        Err(GatewayError::SceneGraph(SceneGraphError::MalformedDocument(last)))
    }

    pub fn scene_graph_to_text(&self, g: &SceneGraph) -> Result<String, GatewayError> {
        if g.is_empty() {
            return Err(SceneGraphError::EmptyGraph.into());
        }
        let vars = BTreeMap::from([("scene graph".to_string(), g.canonical_json())]);
        let reply = self.call(TemplateId::SgToText, vars, "")?;
        let line = reply
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .ok_or_else(|| GatewayError::MalformedReply("empty sentence".into()))?;
        let line = line.strip_prefix("Sentence:").unwrap_or(line);
        Ok(line.trim().trim_matches('"').to_string())
    }
}
