//! Fixture graphs and seeded random graph generation shared by unit tests,
//! integration tests and the simulator.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::scene_graph::{parse_scene_graph, Relation, SceneGraph};

const ENTITIES: &[&str] = &[
    "cat", "dog", "kimono", "lantern", "bridge", "river", "tree", "bicycle", "moon", "cloud", "violin", "teapot",
];
const ATTRIBUTES: &[&str] = &[
    "red", "small", "ancient", "shiny", "wooden", "fluffy", "silk", "tall", "broken", "golden", "quiet", "striped",
];
const RELATIONS: &[&str] = &["near", "under", "holding", "beside", "above", "behind"];
const CONTEXTS: &[&str] = &["in the park", "under the sky", "at the market", "by the sea"];

pub fn kimono_graph() -> SceneGraph {
    parse_scene_graph(
        r#"{"context":["in vibrant hues"],
            "entities":{"kimono":{"attributes":["luxurious","silk"]},"embroidery":{"attributes":["elegant","floral"]}},
            "relations":[{"name":"with","entities":["kimono","embroidery"],"attributes":[]}]}"#,
    )
    .expect("fixture parses")
}

pub fn moon_cloud_graph() -> SceneGraph {
    parse_scene_graph(
        r#"{"context":[],
            "entities":{"moon":{"attributes":["tiny","black","crescent"]},"cloud":{"attributes":["big","white"]}},
            "relations":[{"name":"within","entities":["moon","cloud"],"attributes":[]}]}"#,
    )
    .expect("fixture parses")
}

/// A random valid scene graph with at most `max_nodes` nodes (at least 1).
/// Names and attributes are single words so the rule-based renderer
/// round-trips them.
pub fn random_graph<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize) -> SceneGraph {
    let max_nodes = max_nodes.max(1);
    loop {
        let g = random_graph_unbounded(rng);
        if g.node_count() <= max_nodes && !g.is_empty() {
            return g;
        }
    }
}

fn random_graph_unbounded<R: Rng + ?Sized>(rng: &mut R) -> SceneGraph {
    let mut g = SceneGraph::new();
    let n_entities = rng.gen_range(1..=4);
    let mut names: Vec<&str> = ENTITIES.choose_multiple(rng, n_entities).copied().collect();
    names.sort_unstable();
    for name in &names {
        let n_attrs = rng.gen_range(0..=2);
        let attrs: Vec<String> = ATTRIBUTES.choose_multiple(rng, n_attrs).map(|s| s.to_string()).collect();
        g.add_entity(*name, attrs);
    }
    if names.len() >= 2 {
        for _ in 0..rng.gen_range(0..=2) {
            let pair: Vec<&str> = names.choose_multiple(rng, 2).copied().collect();
            let rel = RELATIONS.choose(rng).expect("non-empty");
            let attrs: Vec<&str> = if rng.gen_bool(0.25) { vec!["slowly"] } else { vec![] };
            g.add_relation(Relation::new(*rel, pair, attrs)).expect("endpoints exist");
        }
    }
    if rng.gen_bool(0.3) {
        g.add_context(*CONTEXTS.choose(rng).expect("non-empty"));
    }
    g
}
