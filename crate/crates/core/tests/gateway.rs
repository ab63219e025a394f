use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeval::gateway::{
    dedup_ngram, jaccard, ngrams, CompletionRequest, Gateway, GatewayConfig, GatewayError, LlmBackend, MockFixtures,
    NodeContext, RecordLine, TemplateId,
};
use treeval::render::render_text;
use treeval::{testkit, SceneGraphError};

/// Replies with scripted responses in order and remembers every prompt.
struct Scripted {
    replies: Mutex<Vec<String>>,
    prompts: Mutex<Vec<CompletionRequest>>,
    relevance: bool,
}

impl Scripted {
    fn new(replies: &[&str]) -> Arc<Self> {
        Arc::new(Scripted {
            replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
            prompts: Mutex::new(Vec::new()),
            relevance: false,
        })
    }
}

impl LlmBackend for Scripted {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        self.prompts.lock().unwrap().push(req.clone());
        if req.template == TemplateId::Relevance {
            let off_topic = req.prompt.contains("submarine");
            return Ok(if off_topic { "No." } else { "Yes." }.to_string());
        }
        self.replies
            .lock()
            .unwrap()
            .pop()
            .ok_or_else(|| GatewayError::BackendUnavailable("script exhausted".into()))
    }

    fn verifies_relevance(&self) -> bool {
        self.relevance
    }
}

fn gateway(backend: Arc<Scripted>) -> Gateway {
    Gateway::new(backend, GatewayConfig::default()).unwrap()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn bundled_dog_topics() {
    let gw = Gateway::mock(MockFixtures::bundled());
    let topics = gw.generate_topics("DOG-human relationships", &NodeContext::default(), 3).unwrap();
    assert_eq!(
        topics,
        strings(&[
            "Interactions between dogs and owners.",
            "The role of a dog in a family setting.",
            "The role of a therapy dog.",
        ])
    );
}

#[test]
fn bundled_spatial_children() {
    let gw = Gateway::mock(MockFixtures::bundled());
    let topics = gw.generate_topics("Spatial relationships", &NodeContext::default(), 3).unwrap();
    assert_eq!(topics, strings(&["Object orientation", "Proximity and distance", "Size comparison and scaling"]));
}

#[test]
fn extra_topics_are_truncated() {
    let reply = "Next Test Topic: one alpha\nNext Test Topic: two beta\nNext Test Topic: three gamma\n\
                 Next Test Topic: four delta\nNext Test Topic: five epsilon";
    let backend = Scripted::new(&[reply]);
    let topics = gateway(backend.clone()).generate_topics("t", &NodeContext::default(), 3).unwrap();
    assert_eq!(topics, strings(&["one alpha", "two beta", "three gamma"]));
    assert_eq!(backend.prompts.lock().unwrap().len(), 1);
}

#[test]
fn near_duplicate_triggers_one_retry() {
    let first = "Next Test Topic: Dogs playing fetch in a park\n\
                 Next Test Topic: Cats sleeping on warm windowsills\n\
                 Next Test Topic: Dogs playing fetch in a park!";
    let second = "Next Test Topic: Dogs playing fetch in a park\nNext Test Topic: Horses grazing near a barn";
    let backend = Scripted::new(&[first, second]);
    let topics = gateway(backend.clone()).generate_topics("animals", &NodeContext::default(), 3).unwrap();
    assert_eq!(
        topics,
        strings(&[
            "Dogs playing fetch in a park",
            "Cats sleeping on warm windowsills",
            "Horses grazing near a barn",
        ])
    );
    let prompts = backend.prompts.lock().unwrap();
    assert_eq!(prompts.len(), 2);
    assert!(prompts[1].prompt.contains("- Cats sleeping on warm windowsills"));
}

#[test]
fn shortfall_after_retries_is_an_error() {
    let backend = Scripted::new(&["Next Test Topic: only one"; 4]);
    let err = gateway(backend).generate_topics("t", &NodeContext::default(), 2).unwrap_err();
    assert_eq!(err, GatewayError::InsufficientOutputs { wanted: 2, got: 1 });
}

#[test]
fn bundled_dog_inputs_include_example() {
    let gw = Gateway::mock(MockFixtures::bundled());
    let inputs = gw.generate_inputs("DOG-human relationships", &NodeContext::default(), 5, &[]).unwrap();
    assert_eq!(inputs.len(), 5);
    assert!(inputs.contains(&"A dog wagging its tail while its owner scratches its belly.".to_string()));
}

#[test]
fn empty_parent_renders_na() {
    let backend = Scripted::new(&["Test Input: A red kite over a hill."]);
    gateway(backend.clone()).generate_inputs("kites", &NodeContext::default(), 1, &[]).unwrap();
    let prompt = backend.prompts.lock().unwrap()[0].prompt.clone();
    assert!(prompt.contains("Records:\nN/A\n"));
    assert!(prompt.contains("Earlier analysis:\nN/A\n"));
}

#[test]
fn parent_records_are_rendered() {
    let backend = Scripted::new(&["Test Input: A red kite over a hill."]);
    let records = [RecordLine {
        topic: "kites".into(),
        prompt: "A kite.".into(),
        score: 0,
        fragment: false,
    }];
    let ctx = NodeContext {
        records: &records,
        reflection: Some("Kites lose their strings."),
    };
    gateway(backend.clone()).generate_inputs("kites", &ctx, 1, &[]).unwrap();
    let prompt = backend.prompts.lock().unwrap()[0].prompt.clone();
    assert!(prompt.contains("Topic: kites | Text input: A kite. | Score: 0"));
    assert!(prompt.contains("Kites lose their strings."));
}

#[test]
fn overlong_input_is_replaced() {
    let long = vec!["word"; 90].join(" ");
    let first = format!("Test Input: {long}\nTest Input: A blue heron standing in shallow water.");
    let second = "Test Input: A lighthouse on a rocky cliff at dusk.";
    let backend = Scripted::new(&[&first, second]);
    let inputs = gateway(backend.clone()).generate_inputs("coast", &NodeContext::default(), 2, &[]).unwrap();
    assert_eq!(
        inputs,
        strings(&["A blue heron standing in shallow water.", "A lighthouse on a rocky cliff at dusk."])
    );
    assert_eq!(backend.prompts.lock().unwrap().len(), 2);
}

#[test]
fn inputs_dedup_against_session_history() {
    let reply = "Test Input: A red kite over a green hill.\nTest Input: A paper boat drifting down a gutter.";
    let backend = Scripted::new(&[reply]);
    let prior = strings(&["A red kite over a green hill."]);
    let inputs = gateway(backend).generate_inputs("toys", &NodeContext::default(), 1, &prior).unwrap();
    assert_eq!(inputs, strings(&["A paper boat drifting down a gutter."]));
}

#[test]
fn relevance_check_filters_in_real_mode() {
    let reply = "Test Input: A yellow submarine under the ice.\nTest Input: A tabby cat on a sofa.";
    let backend = Arc::new(Scripted {
        replies: Mutex::new(vec![reply.to_string()]),
        prompts: Mutex::new(Vec::new()),
        relevance: true,
    });
    let gw = gateway(backend.clone());
    let inputs = gw.generate_inputs("pets", &NodeContext::default(), 1, &[]).unwrap();
    assert_eq!(inputs, strings(&["A tabby cat on a sofa."]));
    assert_eq!(gw.calls(), 3);
}

fn dog_records(with_trace: bool) -> Vec<RecordLine> {
    let mut records = vec![
        RecordLine {
            topic: "DOG-human relationships".into(),
            prompt: "A dog's owner on the couch.".into(),
            score: 0,
            fragment: false,
        },
        RecordLine {
            topic: "DOG-human relationships".into(),
            prompt: "An old man walking a shaggy sheepdog along a foggy beach.".into(),
            score: 1,
            fragment: false,
        },
    ];
    if with_trace {
        records.push(RecordLine {
            topic: "DOG-human relationships".into(),
            prompt: "A dog's owner.".into(),
            score: 0,
            fragment: true,
        });
    }
    records
}

#[test]
fn reflection_with_trace_mentions_owner_focus() {
    let gw = Gateway::mock(MockFixtures::bundled());
    let with = gw.reflect("DOG-human relationships", &dog_records(true)).unwrap();
    let without = gw.reflect("DOG-human relationships", &dog_records(false)).unwrap();
    assert!(with.contains("Owner Focus"));
    assert!(!without.contains("Owner Focus"));
    let trace_refs = |t: &str| t.matches("fragment").count() + t.matches("Owner Focus").count();
    assert!(trace_refs(&with) > trace_refs(&without));
}

#[test]
fn reflection_is_deterministic() {
    let gw = Gateway::mock(MockFixtures::bundled());
    let records = dog_records(true);
    assert_eq!(gw.reflect("some topic", &records).unwrap(), gw.reflect("some topic", &records).unwrap());
}

#[test]
fn reflection_needs_a_failure() {
    let gw = Gateway::mock(MockFixtures::bundled());
    let mut records = dog_records(false);
    records.retain(|r| r.score == 1);
    assert_eq!(gw.reflect("t", &records), Err(GatewayError::NoFailures));
}

#[test]
fn text_to_graph_cat() {
    let gw = Gateway::mock(MockFixtures::default());
    let g = gw.text_to_scene_graph("A fluffy white cat across the room.").unwrap();
    assert_eq!(g.entities()["cat"], strings(&["fluffy", "white"]));
    assert_eq!(g.context(), ["across the room"]);
    assert_eq!(gw.scene_graph_to_text(&g).unwrap(), "A fluffy white cat across the room.");
}

#[test]
fn empty_graph_has_no_text() {
    let gw = Gateway::mock(MockFixtures::default());
    let err = gw.scene_graph_to_text(&treeval::SceneGraph::new()).unwrap_err();
    assert_eq!(err, GatewayError::SceneGraph(SceneGraphError::EmptyGraph));
}

#[test]
fn real_mode_graph_reply_is_parsed_and_retried() {
    let good = "Here is the graph:\n```json\n{\"context\":[],\"entities\":{\"cat\":{\"attributes\":[\"fluffy\"]}},\"relations\":[]}\n```";
    let backend = Scripted::new(&["not json at all", good]);
    let g = gateway(backend).text_to_scene_graph("A fluffy cat.").unwrap();
    assert_eq!(g.entities()["cat"], strings(&["fluffy"]));

    let backend = Scripted::new(&["nope"; 4]);
    let err = gateway(backend).text_to_scene_graph("A cat.").unwrap_err();
    assert!(matches!(err, GatewayError::SceneGraph(SceneGraphError::MalformedDocument(_))));
}

#[test]
fn fixture_responses_are_keyed_by_prompt_digest() {
    let backend = Scripted::new(&["Next Test Topic: placeholder"]);
    gateway(backend.clone()).generate_topics("marbles", &NodeContext::default(), 1).unwrap();
    let prompt = backend.prompts.lock().unwrap()[0].prompt.clone();

    let mut fixtures = MockFixtures::default();
    fixtures.responses.insert(
        MockFixtures::response_key(TemplateId::Topic, &prompt),
        "Next Test Topic: Glass marbles in sunlight".into(),
    );
    let topics = Gateway::mock(fixtures).generate_topics("marbles", &NodeContext::default(), 1).unwrap();
    assert_eq!(topics, strings(&["Glass marbles in sunlight"]));
}

#[test]
fn unknown_topic_is_a_fixture_gap() {
    let err = Gateway::mock(MockFixtures::default())
        .generate_topics("marbles", &NodeContext::default(), 1)
        .unwrap_err();
    assert!(matches!(err, GatewayError::FixtureGap { topic: Some(t), .. } if t == "marbles"));
}

#[test]
fn vocabulary_children_follow_failures() {
    let gw = Gateway::mock(MockFixtures::bundled());
    let records = [RecordLine {
        topic: "clothing".into(),
        prompt: "A faded kimono near a bench.".into(),
        score: 0,
        fragment: false,
    }];
    let ctx = NodeContext {
        records: &records,
        reflection: None,
    };
    let topics = gw.generate_topics("clothing", &ctx, 3).unwrap();
    assert_eq!(topics[0], "clothing: kimono");
    let inputs = gw.generate_inputs("clothing: kimono", &ctx, 5, &[]).unwrap();
    assert!(inputs.iter().all(|p| p.contains("kimono")), "{inputs:?}");
}

/// Hand-enumerated trigram sets give Jaccard 0.9 and 0.3.
#[test]
fn dedup_fixture_pairs() {
    let base12 = "the quick brown fox jumps over the lazy dog near the river";
    let base11 = "the quick brown fox jumps over the lazy dog near the";
    // base12 has 10 trigrams, base11 has the first 9 of them
    assert_eq!(ngrams(base12, 3).len(), 10);
    assert_eq!(ngrams(base11, 3).len(), 9);
    assert!((jaccard(&ngrams(base12, 3), &ngrams(base11, 3)) - 0.9).abs() < 1e-12);

    let a = "red apples sit in a bowl on tables";
    let b = "red apples sit in a small green glass jar";
    // a: 6 trigrams, b: 7 trigrams, shared: "red apples sit", "apples sit in", "sit in a"
    let expected = 3.0 / (6.0 + 7.0 - 3.0);
    assert!((jaccard(&ngrams(a, 3), &ngrams(b, 3)) - expected).abs() < 1e-12);
    assert!((expected - 0.3).abs() < 1e-12);

    let kept = dedup_ngram(&strings(&[base12, base11, a, b]), &[], 3, 0.8);
    assert_eq!(kept, strings(&[base12, a, b]));
}

proptest! {
    #[test]
    fn mock_round_trip_preserves_structure(seed in any::<u64>()) {
        let gw = Gateway::mock(MockFixtures::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = testkit::random_graph(&mut rng, 12);
        let text = gw.scene_graph_to_text(&g).unwrap();
        let canonical = treeval::parse_scene_graph(&g.canonical_json()).unwrap();
        prop_assert_eq!(&text, &render_text(&canonical).unwrap());
        let back = gw.text_to_scene_graph(&text).unwrap();
        let names = |g: &treeval::SceneGraph| g.entities().keys().cloned().collect::<BTreeSet<_>>();
        let rels = |g: &treeval::SceneGraph| g.relations().iter().map(|r| (r.name.clone(), r.entities.clone())).collect::<BTreeSet<_>>();
        prop_assert_eq!(names(&back), names(&g));
        prop_assert_eq!(rels(&back), rels(&g));
        prop_assert_eq!(back, g);
    }

    #[test]
    fn parsing_never_drops_labeled_lines(values in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,4}", 1..8), noise in "[a-z ]{0,20}") {
        let reply: Vec<String> = values.iter().map(|v| format!("{noise} Test Input: {v}")).collect();
        let parsed = treeval::gateway::parse_labeled(&reply.join("\n"), "Test Input:");
        prop_assert_eq!(parsed, values.iter().map(|v| v.trim().to_string()).collect::<Vec<_>>());
    }
}
