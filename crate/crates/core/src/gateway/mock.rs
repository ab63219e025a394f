//! Deterministic offline LLM stand-in driven by a fixture table.
//!
//! Lookup order for a request:
//! 1. `responses["<template>:<sha256 of rendered prompt>"]`, a verbatim reply;
//! 2. the topic's entry in `topics` (fixed children, inputs and reflections);
//! 3. a vocabulary that generates inputs and child topics procedurally;
//! 4. rule-based scene-graph conversion and reflection summaries;
//!
//! and [`GatewayError::FixtureGap`] otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::template::{TemplateId, INPUT_LABEL, TOPIC_LABEL};
use super::{CompletionRequest, GatewayError, LlmBackend};
use crate::render::{parse_text, render_text};
use crate::scene_graph::parse_scene_graph;

const BUNDLED: &str = include_str!("../../fixtures/mock_gateway.json");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixtures {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub topics: BTreeMap<String, TopicFixture>,
    /// Fallback vocabulary for topics without one of their own.
    #[serde(default)]
    pub generator: Option<Vocabulary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicFixture {
    #[serde(default)]
    pub children: Vec<String>,
    #[serde(default)]
    pub children_after_failure: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub inputs_after_failure: Vec<String>,
    #[serde(default)]
    pub reflection: Option<String>,
    #[serde(default)]
    pub reflection_with_trace: Option<String>,
    /// Also applies to every generated descendant topic `"<key>: ..."`.
    #[serde(default)]
    pub vocabulary: Option<Vocabulary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub subjects: Vec<String>,
    pub attributes: Vec<String>,
    pub relations: Vec<String>,
    pub objects: Vec<String>,
    #[serde(default)]
    pub contexts: Vec<String>,
}

impl MockFixtures {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled fixtures parse")
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::InvalidConfig(format!("mock fixtures: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidConfig(format!("mock fixtures {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn response_key(template: TemplateId, prompt: &str) -> String {
        format!("{}:{}", template.as_str(), prompt_digest(prompt))
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: MockFixtures,
    /// Stands in for sampling randomness; 0 keeps replies a pure function of the prompt.
    sampling_seed: u64,
}

impl MockBackend {
    pub fn new(fixtures: MockFixtures) -> Self {
        MockBackend { fixtures, sampling_seed: 0 }
    }

    pub fn with_sampling_seed(fixtures: MockFixtures, sampling_seed: u64) -> Self {
        MockBackend { fixtures, sampling_seed }
    }

    pub fn bundled() -> Self {
        Self::new(MockFixtures::bundled())
    }

    pub fn fixtures(&self) -> &MockFixtures {
        &self.fixtures
    }

    fn rng(&self, prompt: &str) -> ChaCha8Rng {
        if self.sampling_seed == 0 {
            seeded(prompt)
        } else {
            seeded(&format!("{}\n{prompt}", self.sampling_seed))
        }
    }

    fn var<'r>(req: &'r CompletionRequest, name: &str) -> &'r str {
        req.vars.get(name).map(String::as_str).unwrap_or_default()
    }

    fn gap(req: &CompletionRequest) -> GatewayError {
        GatewayError::FixtureGap {
            template: req.template.as_str().to_string(),
            key: MockFixtures::response_key(req.template, &req.prompt),
            topic: req.vars.get("current topic").cloned(),
        }
    }

    /// Vocabulary for a topic plus the focus segments that follow the
    /// vocabulary's own topic key.
    fn vocabulary_for(&self, topic: &str) -> Option<(&Vocabulary, Vec<String>)> {
        let mut best: Option<(&str, &Vocabulary)> = None;
        for (key, fx) in &self.fixtures.topics {
            let Some(v) = &fx.vocabulary else { continue };
            let matches = topic == key || topic.starts_with(&format!("{key}: "));
            if matches && best.is_none_or(|(k, _)| key.len() > k.len()) {
                best = Some((key, v));
            }
        }
        if let Some((key, v)) = best {
            let focus = topic[key.len()..]
                .split(": ")
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            return Some((v, focus));
        }
        self.fixtures.generator.as_ref().map(|v| (v, Vec::new()))
    }

    fn topics(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let topic = Self::var(req, "current topic");
        let records = Self::var(req, "test records");
        let failed = has_failure(records);
        if let Some(fx) = self.fixtures.topics.get(topic) {
            let list = if failed && !fx.children_after_failure.is_empty() {
                &fx.children_after_failure
            } else {
                &fx.children
            };
            if !list.is_empty() {
                return Ok(labeled(TOPIC_LABEL, list));
            }
        }
        let (vocab, focus) = self.vocabulary_for(topic).ok_or_else(|| Self::gap(req))?;
        let dimension = [&vocab.subjects, &vocab.attributes, &vocab.contexts, &vocab.objects]
            .into_iter()
            .find(|d| !d.is_empty() && !d.iter().any(|w| focus.contains(w)))
            .ok_or_else(|| Self::gap(req))?;
        let mut rng = self.rng(&req.prompt);
        let mut order: Vec<&String> = dimension.iter().collect();
        order.shuffle(&mut rng);
        if failed {
            let failing = failing_text(records);
            order.sort_by_key(|w| !contains_word(&failing, w));
        }
        let children: Vec<String> = order.into_iter().map(|w| format!("{topic}: {w}")).collect();
        Ok(labeled(TOPIC_LABEL, &children))
    }

    fn inputs(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let topic = Self::var(req, "current topic");
        let failed = has_failure(Self::var(req, "test records"));
        if let Some(fx) = self.fixtures.topics.get(topic) {
            let list = if failed && !fx.inputs_after_failure.is_empty() {
                &fx.inputs_after_failure
            } else {
                &fx.inputs
            };
            if !list.is_empty() {
                return Ok(labeled(INPUT_LABEL, list));
            }
        }
        let (vocab, focus) = self.vocabulary_for(topic).ok_or_else(|| Self::gap(req))?;
        if vocab.subjects.is_empty() || vocab.relations.is_empty() || vocab.objects.is_empty() {
            return Err(Self::gap(req));
        }
        let wanted: usize = Self::var(req, "n_i").parse().unwrap_or(5);
        let mut rng = self.rng(&req.prompt);
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for _ in 0..wanted * 20 {
            if out.len() >= wanted * 3 {
                break;
            }
            let p = compose(vocab, &focus, &mut rng);
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
        Ok(labeled(INPUT_LABEL, &out))
    }

    fn reflection(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let topic = Self::var(req, "current topic");
        let records = Self::var(req, "test records");
        let with_trace = records.lines().any(|l| l.starts_with("Fragment"));
        if let Some(fx) = self.fixtures.topics.get(topic) {
            let text = if with_trace {
                fx.reflection_with_trace.as_ref().or(fx.reflection.as_ref())
            } else {
                fx.reflection.as_ref()
            };
            if let Some(t) = text {
                return Ok(t.clone());
            }
        }
        Ok(summarize(records))
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let key = MockFixtures::response_key(req.template, &req.prompt);
        if let Some(reply) = self.fixtures.responses.get(&key) {
            return Ok(reply.clone());
        }
        match req.template {
            TemplateId::Topic => self.topics(req),
            TemplateId::Input => self.inputs(req),
            TemplateId::Reflection => self.reflection(req),
            TemplateId::SgToText => {
                let g = parse_scene_graph(Self::var(req, "scene graph"))?;
                Ok(render_text(&g)?)
            }
            TemplateId::TextToSg => {
                let g = parse_text(Self::var(req, "test input"))?;
                Ok(g.canonical_json())
            }
            TemplateId::Relevance => Ok("yes".to_string()),
        }
    }
}

fn labeled(label: &str, values: &[String]) -> String {
    values.iter().map(|v| format!("{label} {v}")).collect::<Vec<_>>().join("\n")
}

fn seeded(prompt: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(prompt.as_bytes());
    ChaCha8Rng::from_seed(digest.into())
}

fn has_failure(records: &str) -> bool {
    records.lines().any(is_failing_line)
}

fn is_failing_line(line: &str) -> bool {
    line.trim_end().ends_with("Score: 0")
}

fn failing_text(records: &str) -> String {
    records.lines().filter(|l| is_failing_line(l)).collect::<Vec<_>>().join("\n")
}

fn contains_word(text: &str, word: &str) -> bool {
    let lower = word.to_lowercase();
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| w == lower)
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// One prompt in the renderer's grammar, honoring any focus words.
fn compose(v: &Vocabulary, focus: &[String], rng: &mut ChaCha8Rng) -> String {
    let pick = |list: &[String], rng: &mut ChaCha8Rng| list.choose(rng).cloned();
    let subject = focus
        .iter()
        .find(|f| v.subjects.contains(f))
        .cloned()
        .or_else(|| pick(&v.subjects, rng))
        .expect("subjects present");
    let attribute = focus
        .iter()
        .find(|f| v.attributes.contains(f))
        .cloned()
        .or_else(|| pick(&v.attributes, rng));
    let context = focus
        .iter()
        .find(|f| v.contexts.contains(f))
        .cloned()
        .or_else(|| if rng.gen_bool(0.5) { pick(&v.contexts, rng) } else { None });
    let relation = pick(&v.relations, rng).expect("relations present");
    let object = pick(&v.objects, rng).expect("objects present");
    let object_attr = if rng.gen_bool(0.6) { pick(&v.attributes, rng) } else { None };

    let mut words = Vec::new();
    let first = attribute.as_deref().unwrap_or(&subject);
    words.push(capitalize(article(first)));
    words.extend(attribute.clone());
    words.push(subject);
    words.push(relation);
    let first_obj = object_attr.as_deref().unwrap_or(&object);
    words.push(article(first_obj).to_string());
    words.extend(object_attr.clone());
    words.push(object);
    words.extend(context);
    format!("{}.", words.join(" "))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Rule-based reflection: failing share, words that only show up in failing
/// inputs, and the smallest failing fragments when a trace is present.
fn summarize(records: &str) -> String {
    let mut fail_words: BTreeMap<String, usize> = BTreeMap::new();
    let mut pass_words: BTreeSet<String> = BTreeSet::new();
    let (mut fails, mut total) = (0, 0);
    let mut fragments: Vec<&str> = Vec::new();
    for line in records.lines() {
        let Some((body, score)) = line.rsplit_once("| Score: ") else { continue };
        let text = body
            .split_once("Text input: ")
            .or_else(|| body.split_once("Fragment of a failing input: "))
            .map(|(_, t)| t.trim())
            .unwrap_or(body.trim());
        let failing = score.trim() == "0";
        if line.starts_with("Fragment") {
            if failing {
                fragments.push(text);
            }
            continue;
        }
        total += 1;
        let words: BTreeSet<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 2)
            .map(str::to_lowercase)
            .collect();
        if failing {
            fails += 1;
            for w in words {
                *fail_words.entry(w).or_default() += 1;
            }
        } else {
            pass_words.extend(words);
        }
    }
    let mut lines = vec![format!("1. {fails} of {total} test records failed.")];
    let mut distinctive: Vec<(&String, &usize)> =
        fail_words.iter().filter(|(w, _)| !pass_words.contains(*w)).collect();
    distinctive.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    if !distinctive.is_empty() {
        let top: Vec<&str> = distinctive.iter().take(5).map(|(w, _)| w.as_str()).collect();
        lines.push(format!("2. Failing inputs share words absent from passing ones: {}.", top.join(", ")));
    }
    if !fragments.is_empty() {
        let shortest = fragments.iter().map(|f| f.split_whitespace().count()).min().unwrap_or(0);
        let mut smallest: Vec<&str> = fragments
            .iter()
            .copied()
            .filter(|f| f.split_whitespace().count() == shortest)
            .collect();
        smallest.dedup();
        let quoted: Vec<String> = smallest.iter().map(|f| format!("\"{f}\"")).collect();
        lines.push(format!(
            "{}. Failure location narrows the failures down to: {}.",
            lines.len() + 1,
            quoted.join(", ")
        ));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary {
            subjects: vec!["kimono".into(), "scarf".into()],
            attributes: vec!["silk".into(), "red".into()],
            relations: vec!["beside".into()],
            objects: vec!["lantern".into()],
            contexts: vec!["in the garden".into()],
        }
    }

    #[test]
    fn composed_prompts_parse_back() {
        let mut rng = seeded("x");
        for _ in 0..50 {
            let p = compose(&vocab(), &[], &mut rng);
            let g = parse_text(&p).unwrap();
            assert_eq!(render_text(&g).unwrap(), p);
        }
    }

    #[test]
    fn focus_fixes_subject_and_attribute() {
        let mut rng = seeded("y");
        for _ in 0..20 {
            let p = compose(&vocab(), &["scarf".into(), "silk".into()], &mut rng);
            assert!(p.starts_with("A silk scarf beside"), "{p}");
        }
    }

    #[test]
    fn summary_names_failing_words_and_fragments() {
        let records = "Topic: t | Text input: A silk kimono beside a lantern. | Score: 0\n\
                       Topic: t | Text input: A red scarf beside a lantern. | Score: 1\n\
                       Fragment of a failing input: A silk kimono. | Score: 0\n\
                       Fragment of a failing input: A kimono. | Score: 0";
        let s = summarize(records);
        assert!(s.starts_with("1. 1 of 2 test records failed."));
        assert!(s.contains("kimono, silk"));
        assert!(s.contains("\"A kimono.\""));
    }
}
