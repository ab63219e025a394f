use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GatewayError;

pub const TOPIC_LABEL: &str = "Next Test Topic:";
pub const INPUT_LABEL: &str = "Test Input:";
pub const MAX_INPUT_WORDS: usize = 77;
pub const EMPTY_RECORDS: &str = "N/A";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Topic,
    Input,
    Reflection,
    SgToText,
    TextToSg,
    Relevance,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Topic => "topic",
            TemplateId::Input => "input",
            TemplateId::Reflection => "reflection",
            TemplateId::SgToText => "sg_to_text",
            TemplateId::TextToSg => "text_to_sg",
            TemplateId::Relevance => "relevance",
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::Topic => TOPIC_TEMPLATE,
            TemplateId::Input => INPUT_TEMPLATE,
            TemplateId::Reflection => REFLECTION_TEMPLATE,
            TemplateId::SgToText => SG_TO_TEXT_TEMPLATE,
            TemplateId::TextToSg => TEXT_TO_SG_TEMPLATE,
            TemplateId::Relevance => RELEVANCE_TEMPLATE,
        }
    }
}

const TOPIC_TEMPLATE: &str = "\
You are probing a text-to-image model for weaknesses. The topic under test is \"{current topic}\". \
Propose {n_t} follow-up topics. Each one should either zoom in on a detail of this topic or pair it with other objects \
and relationships, leaning toward directions the records suggest will expose mistakes.
Every record gives its topic, the exact prompt sent to the model and a Score: 1 if the image was judged correct, 0 if it was judged wrong. \
N/A stands for an empty record list.
Records:
{test records}
Earlier analysis:
{reflection}
Keep each proposal on the topic and unlike the others. Replace every <OUTPUTk> below and leave the line labels as they are. \
Topic under test: {current topic}.
{output slots}";

const INPUT_TEMPLATE: &str = "\
You are probing a text-to-image model for weaknesses within the topic \"{current topic}\". \
Write {n_i} prompts for the model that stay on this topic while exploring its finer details and interactions.
Every record gives its topic, the exact prompt sent to the model and a Score: 1 if the image was judged correct, 0 if it was judged wrong. \
N/A stands for an empty record list.
Records:
{test records}
Earlier analysis:
{reflection}
Each prompt must describe something a picture can show and must differ from the others. No prompt may be longer than 77 words. \
Make the prompts gradually harder or longer than those in the records. Replace every <OUTPUTk> below and leave the line labels as they are. \
Topic under test: {current topic}.
{output slots}";

const REFLECTION_TEMPLATE: &str = "\
You review test results of a text-to-image model. Every record gives its topic, the prompt and a Score, \
where 1 marks a correct image and 0 a wrong one. Records marked as fragments come from shrinking a failing prompt; \
they show which pieces still fail on their own.
Explain what sets the failing prompts (Score 0) apart from the passing ones (Score 1) and give a numbered list of the \
patterns the model handles poorly.
Topic: {current topic}
Records:
{test records}";

const SG_TO_TEXT_TEMPLATE: &str = "\
Write one sentence describing the scene graph below. Mention every context string, entity, attribute and relation it holds \
and add nothing that is not in it.
Scene graph: {scene graph}
Sentence:";

const TEXT_TO_SG_TEMPLATE: &str = "\
Turn the prompt below into a scene graph. Reply with JSON only, in the shape \
{\"context\": [\"...\"], \"entities\": {\"<name>\": {\"attributes\": [\"...\"]}}, \
\"relations\": [{\"name\": \"...\", \"entities\": [\"<name>\", \"<name>\"], \"attributes\": []}]}.
Prompt: {test input}";

const RELEVANCE_TEMPLATE: &str = "\
Does the prompt below belong to the test topic \"{current topic}\"? Answer yes or no.
Prompt: {test input}";

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_][a-z_ ]*)\}").expect("valid regex"));

/// Substitutes `{name}` placeholders in one pass; substituted values are not
/// rescanned, so JSON payloads may contain braces.
pub fn render(template: TemplateId, vars: &BTreeMap<String, String>) -> Result<String, GatewayError> {
    let body = template.body();
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for caps in PLACEHOLDER.captures_iter(body) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        let value = vars
            .get(name)
            .ok_or_else(|| GatewayError::UnresolvedPlaceholder(name.to_string()))?;
        out.push_str(&body[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&body[last..]);
    Ok(out)
}

/// `n` labelled slot lines `<label> <OUTPUT0>` ... for the model to fill.
pub fn output_slots(label: &str, n: usize) -> String {
    (0..n).map(|i| format!("{label} <OUTPUT{i}>")).collect::<Vec<_>>().join("\n")
}

/// One line of the records block handed to the LLM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLine {
    pub topic: String,
    pub prompt: String,
    pub score: u8,
    /// Set for probe records produced while shrinking a failing prompt.
    #[serde(default)]
    pub fragment: bool,
}

pub fn render_records(records: &[RecordLine]) -> String {
    if records.is_empty() {
        return EMPTY_RECORDS.to_string();
    }
    records
        .iter()
        .map(|r| {
            if r.fragment {
                format!("Fragment of a failing input: {} | Score: {}", r.prompt, r.score)
            } else {
                format!("Topic: {} | Text input: {} | Score: {}", r.topic, r.prompt, r.score)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^<OUTPUT\d*>\.?$").expect("valid regex"));

/// Values of every line carrying `label`, in order. The label may appear
/// anywhere in the line and is matched case-insensitively; unfilled slots and
/// empty values are skipped.
pub fn parse_labeled(text: &str, label: &str) -> Vec<String> {
    let needle = label.to_lowercase();
    text.lines()
        .filter_map(|line| {
            let lower = line.to_lowercase();
            let at = lower.find(&needle)?;
            // lowercasing can shift byte offsets for non-ASCII text
            let rest = if lower.len() == line.len() {
                &line[at + needle.len()..]
            } else {
                line.char_indices()
                    .map(|(i, _)| i)
                    .find(|&i| line[i..].to_lowercase().starts_with(&needle))
                    .map(|i| &line[i + label.len()..])?
            };
            let value = rest.trim_matches(|c: char| c.is_whitespace() || c == '"' || c == '*');
            (!value.is_empty() && !SLOT.is_match(value)).then(|| value.to_string())
        })
        .collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn topic_template_keeps_contract() {
        let v = vars(&[
            ("current topic", "DOG-human relationships"),
            ("n_t", "3"),
            ("test records", EMPTY_RECORDS),
            ("reflection", EMPTY_RECORDS),
            ("output slots", &output_slots(TOPIC_LABEL, 3)),
        ]);
        let text = render(TemplateId::Topic, &v).unwrap();
        assert!(text.contains("DOG-human relationships"));
        assert!(text.contains("Next Test Topic: <OUTPUT2>"));
        assert!(!text.contains("<OUTPUT3>"));
        assert!(text.contains("1 if the image was judged correct, 0 if it was judged wrong"));
    }

    #[test]
    fn input_template_keeps_contract() {
        let v = vars(&[
            ("current topic", "t"),
            ("n_i", "5"),
            ("test records", &render_records(&[])),
            ("reflection", EMPTY_RECORDS),
            ("output slots", &output_slots(INPUT_LABEL, 5)),
        ]);
        let text = render(TemplateId::Input, &v).unwrap();
        assert!(text.contains("77 words"));
        assert!(text.contains("Records:\nN/A\n"));
        assert!(text.contains("Test Input: <OUTPUT4>"));
    }

    #[test]
    fn unresolved_placeholder_is_an_error() {
        let err = render(TemplateId::Relevance, &vars(&[("current topic", "x")])).unwrap_err();
        assert_eq!(err, GatewayError::UnresolvedPlaceholder("test input".into()));
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let text = render(TemplateId::SgToText, &vars(&[("scene graph", "{test input}")])).unwrap();
        assert!(text.contains("Scene graph: {test input}"));
        let json_shape = render(TemplateId::TextToSg, &vars(&[("test input", "A cat.")])).unwrap();
        assert!(json_shape.contains("{\"context\""));
    }

    #[test]
    fn parses_labels_amid_prose() {
        let reply = "Sure! Here you go.\nNext Test Topic: Interactions between dogs and owners.\n\
                     1. next test topic: The role of a dog in a family setting.\nunrelated line\n\
                     Next Test Topic: <OUTPUT2>\n  **Next Test Topic:** \"The role of a therapy dog.\"";
        assert_eq!(
            parse_labeled(reply, TOPIC_LABEL),
            vec![
                "Interactions between dogs and owners.",
                "The role of a dog in a family setting.",
                "The role of a therapy dog.",
            ]
        );
    }

    #[test]
    fn records_block_marks_fragments() {
        let block = render_records(&[
            RecordLine { topic: "dogs".into(), prompt: "A dog.".into(), score: 1, fragment: false },
            RecordLine { topic: "dogs".into(), prompt: "An owner.".into(), score: 0, fragment: true },
        ]);
        assert_eq!(
            block,
            "Topic: dogs | Text input: A dog. | Score: 1\nFragment of a failing input: An owner. | Score: 0"
        );
    }
}
