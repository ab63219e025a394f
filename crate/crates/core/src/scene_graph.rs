//! Scene graphs: the structured form of a prompt that failure location
//! splits and merges.
//!
//! A graph holds three kinds of top-level material: free context strings
//! ("in the park"), entities with attribute lists, and relations over two or
//! more entities (with their own attributes). Attributes and relations are
//! *dependent* nodes: an attribute needs its owner, a relation needs every
//! endpoint. Every fragment produced here is closed under those dependencies
//! so it can always be rendered back to a sentence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SceneGraphError {
    #[error("malformed scene graph document: {0}")]
    MalformedDocument(String),
    #[error("relation `{relation}` references unknown entity `{entity}`")]
    DanglingReference { relation: String, entity: String },
    #[error("scene graph is atomic and cannot be split")]
    AtomicGraph,
    #[error("scene graph has a single top-level node and cannot be divided into two smaller fragments")]
    Indivisible,
    #[error("scene graph is empty")]
    EmptyGraph,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Relation {
    pub name: String,
    pub entities: Vec<String>,
    pub attributes: Vec<String>,
}

impl Relation {
    pub fn new<N, E, A>(name: N, entities: E, attributes: A) -> Self
    where
        N: Into<String>,
        E: IntoIterator,
        E::Item: Into<String>,
        A: IntoIterator,
        A::Item: Into<String>,
    {
        Relation {
            name: name.into(),
            entities: entities.into_iter().map(Into::into).collect(),
            attributes: attributes.into_iter().map(Into::into).collect(),
        }
    }
}

/// One node of a scene graph, identified by value so node sets from
/// different graphs can be compared.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GraphNode {
    Context(String),
    Entity(String),
    EntityAttribute {
        entity: String,
        attribute: String,
    },
    Relation {
        name: String,
        entities: Vec<String>,
    },
    RelationAttribute {
        name: String,
        entities: Vec<String>,
        attribute: String,
    },
}

impl GraphNode {
    /// Nodes this node cannot exist without.
    pub fn dependencies(&self) -> Vec<GraphNode> {
        match self {
            GraphNode::Context(_) | GraphNode::Entity(_) => Vec::new(),
            GraphNode::EntityAttribute { entity, .. } => vec![GraphNode::Entity(entity.clone())],
            GraphNode::Relation { entities, .. } => {
                entities.iter().cloned().map(GraphNode::Entity).collect()
            }
            GraphNode::RelationAttribute { name, entities, .. } => vec![GraphNode::Relation {
                name: name.clone(),
                entities: entities.clone(),
            }],
        }
    }
}

/// Structured prompt representation.
///
/// Equality is canonical: two graphs are equal when they contain the same
/// nodes, regardless of entity insertion order or list ordering.
#[derive(Debug, Clone, Default)]
pub struct SceneGraph {
    context: Vec<String>,
    entities: IndexMap<String, Vec<String>>,
    relations: Vec<Relation>,
}

impl PartialEq for SceneGraph {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_json() == other.canonical_json()
    }
}

impl Eq for SceneGraph {}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from parts, validating every invariant.
    pub fn from_parts<C, E, A>(
        context: C,
        entities: E,
        relations: Vec<Relation>,
    ) -> Result<Self, SceneGraphError>
    where
        C: IntoIterator,
        C::Item: Into<String>,
        E: IntoIterator<Item = (String, A)>,
        A: IntoIterator,
        A::Item: Into<String>,
    {
        let mut g = SceneGraph::new();
        for c in context {
            g.add_context(c);
        }
        for (name, attrs) in entities {
            g.add_entity(name, attrs);
        }
        for r in relations {
            g.add_relation(r)?;
        }
        Ok(g)
    }

    pub fn context(&self) -> &[String] {
        &self.context
    }

    pub fn entities(&self) -> &IndexMap<String, Vec<String>> {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0
    }

    pub fn add_context(&mut self, text: impl Into<String>) {
        let text = text.into().trim().to_string();
        if !text.is_empty() && !self.context.contains(&text) {
            self.context.push(text);
        }
    }

    /// Adds an entity, or unions attributes into an existing one.
    pub fn add_entity<A>(&mut self, name: impl Into<String>, attributes: A)
    where
        A: IntoIterator,
        A::Item: Into<String>,
    {
        let name = name.into().trim().to_string();
        let slot = self.entities.entry(name).or_default();
        for a in attributes {
            let a = a.into().trim().to_string();
            if !a.is_empty() && !slot.contains(&a) {
                slot.push(a);
            }
        }
    }

    /// Adds a relation; a relation equal in name and endpoint list to an
    /// existing one is unified with it.
    pub fn add_relation(&mut self, relation: Relation) -> Result<(), SceneGraphError> {
        let name = relation.name.trim().to_string();
        if name.is_empty() {
            return Err(SceneGraphError::MalformedDocument(
                "relation name is empty".into(),
            ));
        }
        let entities: Vec<String> = relation
            .entities
            .iter()
            .map(|e| e.trim().to_string())
            .collect();
        if entities.len() < 2 {
            return Err(SceneGraphError::MalformedDocument(format!(
                "relation `{name}` needs at least two entities"
            )));
        }
        for e in &entities {
            if !self.entities.contains_key(e) {
                return Err(SceneGraphError::DanglingReference {
                    relation: name.clone(),
                    entity: e.clone(),
                });
            }
        }
        let attrs = relation.attributes.iter().map(|a| a.trim().to_string());
        let idx = match self
            .relations
            .iter()
            .position(|r| r.name == name && r.entities == entities)
        {
            Some(i) => i,
            None => {
                self.relations.push(Relation {
                    name,
                    entities,
                    attributes: Vec::new(),
                });
                self.relations.len() - 1
            }
        };
        let slot = &mut self.relations[idx].attributes;
        for a in attrs {
            if !a.is_empty() && !slot.contains(&a) {
                slot.push(a);
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.context.len()
            + self.entities.values().map(|a| 1 + a.len()).sum::<usize>()
            + self.relations.iter().map(|r| 1 + r.attributes.len()).sum::<usize>()
    }

    pub fn is_atomic(&self) -> bool {
        self.node_count() == 1
    }

    /// True when the graph has exactly one node that nothing else depends
    /// on, i.e. it is the dependency closure of a single node (a bare
    /// entity, an entity with one attribute, a bare relation, ...).
    pub fn is_elementary(&self) -> bool {
        self.top_nodes().len() == 1
    }

    pub fn nodes(&self) -> BTreeSet<GraphNode> {
        let mut out = BTreeSet::new();
        for c in &self.context {
            out.insert(GraphNode::Context(c.clone()));
        }
        for (e, attrs) in &self.entities {
            out.insert(GraphNode::Entity(e.clone()));
            for a in attrs {
                out.insert(GraphNode::EntityAttribute {
                    entity: e.clone(),
                    attribute: a.clone(),
                });
            }
        }
        for r in &self.relations {
            out.insert(GraphNode::Relation {
                name: r.name.clone(),
                entities: r.entities.clone(),
            });
            for a in &r.attributes {
                out.insert(GraphNode::RelationAttribute {
                    name: r.name.clone(),
                    entities: r.entities.clone(),
                    attribute: a.clone(),
                });
            }
        }
        out
    }

    /// Nodes no other node depends on, in document order.
    pub fn top_nodes(&self) -> Vec<GraphNode> {
        let referenced: BTreeSet<&str> = self
            .relations
            .iter()
            .flat_map(|r| r.entities.iter().map(String::as_str))
            .collect();
        let mut out = Vec::new();
        for (e, attrs) in &self.entities {
            if attrs.is_empty() {
                if !referenced.contains(e.as_str()) {
                    out.push(GraphNode::Entity(e.clone()));
                }
            } else {
                out.extend(attrs.iter().map(|a| GraphNode::EntityAttribute {
                    entity: e.clone(),
                    attribute: a.clone(),
                }));
            }
        }
        for r in &self.relations {
            if r.attributes.is_empty() {
                out.push(GraphNode::Relation {
                    name: r.name.clone(),
                    entities: r.entities.clone(),
                });
            } else {
                out.extend(r.attributes.iter().map(|a| GraphNode::RelationAttribute {
                    name: r.name.clone(),
                    entities: r.entities.clone(),
                    attribute: a.clone(),
                }));
            }
        }
        out.extend(self.context.iter().cloned().map(GraphNode::Context));
        out
    }

    pub fn is_subgraph_of(&self, other: &SceneGraph) -> bool {
        self.nodes().is_subset(&other.nodes())
    }

    /// Keeps only the given nodes, preserving document order. The set must
    /// be dependency-closed.
    pub fn restrict(&self, keep: &BTreeSet<GraphNode>) -> SceneGraph {
        let mut g = SceneGraph::new();
        for c in &self.context {
            if keep.contains(&GraphNode::Context(c.clone())) {
                g.context.push(c.clone());
            }
        }
        for (e, attrs) in &self.entities {
            if !keep.contains(&GraphNode::Entity(e.clone())) {
                continue;
            }
            let kept = attrs
                .iter()
                .filter(|a| {
                    keep.contains(&GraphNode::EntityAttribute {
                        entity: e.clone(),
                        attribute: (*a).clone(),
                    })
                })
                .cloned()
                .collect();
            g.entities.insert(e.clone(), kept);
        }
        for r in &self.relations {
            let node = GraphNode::Relation {
                name: r.name.clone(),
                entities: r.entities.clone(),
            };
            if !keep.contains(&node) {
                continue;
            }
            let attributes = r
                .attributes
                .iter()
                .filter(|a| {
                    keep.contains(&GraphNode::RelationAttribute {
                        name: r.name.clone(),
                        entities: r.entities.clone(),
                        attribute: (*a).clone(),
                    })
                })
                .cloned()
                .collect();
            g.relations.push(Relation {
                name: r.name.clone(),
                entities: r.entities.clone(),
                attributes,
            });
        }
        g
    }

    /// Builds a graph from a dependency-closed node set, in canonical order.
    pub fn from_nodes(nodes: &BTreeSet<GraphNode>) -> Result<SceneGraph, SceneGraphError> {
        let mut g = SceneGraph::new();
        for n in nodes {
            match n {
                GraphNode::Context(c) => g.add_context(c.clone()),
                GraphNode::Entity(e) => g.add_entity(e.clone(), Vec::<String>::new()),
                _ => {}
            }
        }
        for n in nodes {
            if let GraphNode::EntityAttribute { entity, attribute } = n {
                if !g.entities.contains_key(entity) {
                    return Err(SceneGraphError::MalformedDocument(format!(
                        "attribute `{attribute}` without entity `{entity}`"
                    )));
                }
                g.add_entity(entity.clone(), [attribute.clone()]);
            }
        }
        for n in nodes {
            if let GraphNode::Relation { name, entities } = n {
                g.add_relation(Relation::new(name.clone(), entities.clone(), Vec::<String>::new()))?;
            }
        }
        for n in nodes {
            if let GraphNode::RelationAttribute {
                name,
                entities,
                attribute,
            } = n
            {
                let Some(r) = g
                    .relations
                    .iter_mut()
                    .find(|r| &r.name == name && &r.entities == entities)
                else {
                    return Err(SceneGraphError::MalformedDocument(format!(
                        "attribute `{attribute}` without relation `{name}`"
                    )));
                };
                r.attributes.push(attribute.clone());
            }
        }
        Ok(g)
    }

    /// Canonical JSON: fixed key order, entity names sorted, every list
    /// except relation endpoints sorted, no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.canonical_doc()).expect("canonical doc serializes")
    }

    fn canonical_doc(&self) -> CanonicalDoc<'_> {
        let mut context: Vec<&str> = self.context.iter().map(String::as_str).collect();
        context.sort_unstable();
        let entities = self
            .entities
            .iter()
            .map(|(name, attrs)| {
                let mut attributes: Vec<&str> = attrs.iter().map(String::as_str).collect();
                attributes.sort_unstable();
                (name.as_str(), CanonicalEntity { attributes })
            })
            .collect();
        let mut relations: Vec<CanonicalRelation<'_>> = self
            .relations
            .iter()
            .map(|r| {
                let mut attributes: Vec<&str> = r.attributes.iter().map(String::as_str).collect();
                attributes.sort_unstable();
                CanonicalRelation {
                    name: &r.name,
                    entities: r.entities.iter().map(String::as_str).collect(),
                    attributes,
                }
            })
            .collect();
        relations.sort();
        CanonicalDoc {
            context,
            entities,
            relations,
        }
    }

    /// Divides a graph into two strictly smaller dependency-closed halves
    /// whose merge is the original graph.
    ///
    /// Priority: relations first, then independent components (a relation
    /// with its endpoints, or a free entity), then the attributes of a single
    /// component, and context strings last.
    pub fn split(&self) -> Result<(SceneGraph, SceneGraph), SceneGraphError> {
        match self.node_count() {
            0 => return Err(SceneGraphError::EmptyGraph),
            1 => return Err(SceneGraphError::AtomicGraph),
            _ => {}
        }

        if self.relations.len() >= 2 {
            return Ok(self.split_by_relations());
        }

        let components = self.components();
        if components.len() >= 2 {
            return Ok(self.split_by_components(&components));
        }

        let core_tops: Vec<GraphNode> = self
            .top_nodes()
            .into_iter()
            .filter(|n| !matches!(n, GraphNode::Context(_)))
            .collect();
        if core_tops.len() >= 2 {
            let (first, second) = halve(&core_tops);
            let mut a = self.restrict(&self.closure(first));
            let mut b = self.restrict(&self.closure(second));
            self.distribute_context(&mut a, &mut b);
            return Ok((a, b));
        }

        let has_core = !self.entities.is_empty();
        if has_core && !self.context.is_empty() {
            let mut core = self.clone();
            core.context.clear();
            let ctx = SceneGraph {
                context: self.context.clone(),
                ..SceneGraph::default()
            };
            return Ok((core, ctx));
        }
        if !has_core && self.context.len() >= 2 {
            let (first, second) = halve(&self.context);
            let a = SceneGraph {
                context: first.to_vec(),
                ..SceneGraph::default()
            };
            let b = SceneGraph {
                context: second.to_vec(),
                ..SceneGraph::default()
            };
            return Ok((a, b));
        }
        Err(SceneGraphError::Indivisible)
    }

    /// For an elementary graph (one top node), drops that top node:
    /// `cloud{big}` becomes `cloud`, a bare relation loses the relation.
    /// Returns `None` for atomic or empty graphs.
    pub fn peel(&self) -> Option<SceneGraph> {
        if self.node_count() < 2 {
            return None;
        }
        let tops = self.top_nodes();
        if tops.len() != 1 {
            return None;
        }
        let mut keep = self.nodes();
        keep.remove(&tops[0]);
        Some(self.restrict(&keep))
    }

    fn split_by_relations(&self) -> (SceneGraph, SceneGraph) {
        let (first, second) = halve(&self.relations);
        let referenced: BTreeSet<&str> = self
            .relations
            .iter()
            .flat_map(|r| r.entities.iter().map(String::as_str))
            .collect();
        let free: Vec<&String> = self
            .entities
            .keys()
            .filter(|e| !referenced.contains(e.as_str()))
            .collect();
        let (free_a, free_b) = halve(&free);

        let build = |rels: &[Relation], free: &[&String]| {
            let mut keep = BTreeSet::new();
            for r in rels {
                keep.extend(self.relation_closure(r));
            }
            for e in free {
                keep.extend(self.entity_nodes(e));
            }
            self.restrict(&keep)
        };
        let mut a = build(first, free_a);
        let mut b = build(second, free_b);
        self.distribute_context(&mut a, &mut b);
        (a, b)
    }

    fn split_by_components(&self, components: &[BTreeSet<GraphNode>]) -> (SceneGraph, SceneGraph) {
        let (first, second) = halve(components);
        let union = |parts: &[BTreeSet<GraphNode>]| {
            parts.iter().flatten().cloned().collect::<BTreeSet<_>>()
        };
        let mut a = self.restrict(&union(first));
        let mut b = self.restrict(&union(second));
        self.distribute_context(&mut a, &mut b);
        (a, b)
    }

    /// Independent parts of a graph with at most one relation: the relation
    /// with its endpoints (and all their attributes), and every free entity.
    fn components(&self) -> Vec<BTreeSet<GraphNode>> {
        debug_assert!(self.relations.len() <= 1);
        let mut out: Vec<(usize, BTreeSet<GraphNode>)> = Vec::new();
        let rel = self.relations.first();
        if let Some(r) = rel {
            let pos = r
                .entities
                .iter()
                .filter_map(|e| self.entities.get_index_of(e))
                .min()
                .unwrap_or(0);
            out.push((pos, self.relation_closure(r)));
        }
        for (i, name) in self.entities.keys().enumerate() {
            if rel.is_some_and(|r| r.entities.contains(name)) {
                continue;
            }
            out.push((i, self.entity_nodes(name)));
        }
        out.sort_by_key(|(pos, _)| *pos);
        out.into_iter().map(|(_, c)| c).collect()
    }

    /// Relation node, its attributes, and its endpoints with their attributes.
    fn relation_closure(&self, r: &Relation) -> BTreeSet<GraphNode> {
        let mut out = BTreeSet::new();
        out.insert(GraphNode::Relation {
            name: r.name.clone(),
            entities: r.entities.clone(),
        });
        for a in &r.attributes {
            out.insert(GraphNode::RelationAttribute {
                name: r.name.clone(),
                entities: r.entities.clone(),
                attribute: a.clone(),
            });
        }
        for e in &r.entities {
            out.extend(self.entity_nodes(e));
        }
        out
    }

    fn entity_nodes(&self, name: &str) -> BTreeSet<GraphNode> {
        let mut out = BTreeSet::new();
        out.insert(GraphNode::Entity(name.to_string()));
        if let Some(attrs) = self.entities.get(name) {
            for a in attrs {
                out.insert(GraphNode::EntityAttribute {
                    entity: name.to_string(),
                    attribute: a.clone(),
                });
            }
        }
        out
    }

    /// Dependency closure of a set of nodes.
    pub fn closure<'a>(&self, nodes: impl IntoIterator<Item = &'a GraphNode>) -> BTreeSet<GraphNode> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<GraphNode> = nodes.into_iter().cloned().collect();
        while let Some(n) = stack.pop() {
            if out.insert(n.clone()) {
                stack.extend(n.dependencies());
            }
        }
        out
    }

    /// Context strings mentioning an entity or relation kept by a half go to
    /// that half (possibly both); the rest are split evenly.
    fn distribute_context(&self, a: &mut SceneGraph, b: &mut SceneGraph) {
        let mut unreferenced = Vec::new();
        for c in &self.context {
            let in_a = a.mentioned_by(c);
            let in_b = b.mentioned_by(c);
            if in_a {
                a.context.push(c.clone());
            }
            if in_b {
                b.context.push(c.clone());
            }
            if !in_a && !in_b {
                unreferenced.push(c.clone());
            }
        }
        let (first, second) = halve(&unreferenced);
        a.context.extend(first.iter().cloned());
        b.context.extend(second.iter().cloned());
    }

    fn mentioned_by(&self, text: &str) -> bool {
        let words = words(text);
        let names = self
            .entities
            .keys()
            .map(String::as_str)
            .chain(self.relations.iter().map(|r| r.name.as_str()));
        names.into_iter().any(|name| {
            let needle = words_of(name);
            !needle.is_empty() && words.windows(needle.len()).any(|w| w == needle.as_slice())
        })
    }
}

/// First half gets the extra element.
fn halve<T>(items: &[T]) -> (&[T], &[T]) {
    items.split_at(items.len().div_ceil(2))
}

fn words_of(text: &str) -> Vec<String> {
    words(text)
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Union of two graphs. Entities with equal names unify (attributes: `a`'s
/// then `b`'s new ones); relations equal in name and endpoint list unify;
/// context strings are deduplicated.
pub fn merge(a: &SceneGraph, b: &SceneGraph) -> SceneGraph {
    let mut out = a.clone();
    for c in &b.context {
        out.add_context(c.clone());
    }
    for (e, attrs) in &b.entities {
        out.add_entity(e.clone(), attrs.iter().cloned());
    }
    for r in &b.relations {
        out.add_relation(r.clone())
            .expect("relation endpoints present in merged graph");
    }
    out
}

pub fn parse_scene_graph(text: &str) -> Result<SceneGraph, SceneGraphError> {
    let raw: RawDoc =
        serde_json::from_str(text).map_err(|e| SceneGraphError::MalformedDocument(e.to_string()))?;
    raw.into_graph()
}

pub fn parse_scene_graph_value(value: &Value) -> Result<SceneGraph, SceneGraphError> {
    let raw = RawDoc::deserialize(value)
        .map_err(|e| SceneGraphError::MalformedDocument(e.to_string()))?;
    raw.into_graph()
}

pub fn serialize_scene_graph(g: &SceneGraph) -> String {
    g.canonical_json()
}

impl Serialize for SceneGraph {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.canonical_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SceneGraph {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawDoc::deserialize(deserializer)?;
        raw.into_graph().map_err(de::Error::custom)
    }
}

impl fmt::Display for SceneGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_json())
    }
}

#[derive(Serialize)]
struct CanonicalDoc<'a> {
    context: Vec<&'a str>,
    entities: BTreeMap<&'a str, CanonicalEntity<'a>>,
    relations: Vec<CanonicalRelation<'a>>,
}

#[derive(Serialize)]
struct CanonicalEntity<'a> {
    attributes: Vec<&'a str>,
}

#[derive(Serialize, PartialEq, Eq, PartialOrd, Ord)]
struct CanonicalRelation<'a> {
    name: &'a str,
    entities: Vec<&'a str>,
    attributes: Vec<&'a str>,
}

// Lenient input side. Accepts the canonical form as well as the map forms
// LLMs emit, where relation names repeat as object keys.

#[derive(Deserialize)]
struct RawDoc {
    context: RawContext,
    entities: OrderedEntries,
    relations: RawRelations,
}

impl RawDoc {
    fn into_graph(self) -> Result<SceneGraph, SceneGraphError> {
        let mut g = SceneGraph::new();
        for c in self.context.0 {
            g.add_context(c);
        }
        for (name, body) in self.entities.0 {
            let attrs = attribute_list(&body, &name)?;
            if name.trim().is_empty() {
                return Err(SceneGraphError::MalformedDocument("empty entity name".into()));
            }
            g.add_entity(name, attrs);
        }
        for (name, entities, attrs) in self.relations.0 {
            g.add_relation(Relation::new(name, entities, attrs))?;
        }
        Ok(g)
    }
}

fn attribute_list(body: &Value, owner: &str) -> Result<Vec<String>, SceneGraphError> {
    let list = match body {
        Value::Array(_) => body,
        Value::Object(map) => match map.get("attributes") {
            Some(v) => v,
            None => return Ok(Vec::new()),
        },
        Value::Null => return Ok(Vec::new()),
        _ => {
            return Err(SceneGraphError::MalformedDocument(format!(
                "attributes of `{owner}` must be a list"
            )))
        }
    };
    string_list(list, owner)
}

fn string_list(v: &Value, owner: &str) -> Result<Vec<String>, SceneGraphError> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Ok(s.clone()),
                _ => Err(SceneGraphError::MalformedDocument(format!(
                    "non-string item in list of `{owner}`"
                ))),
            })
            .collect(),
        Value::Null => Ok(Vec::new()),
        _ => Err(SceneGraphError::MalformedDocument(format!(
            "expected a list in `{owner}`"
        ))),
    }
}

struct RawContext(Vec<String>);

impl<'de> Deserialize<'de> for RawContext {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match Value::deserialize(deserializer)? {
            Value::Array(items) => items
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    other => Err(de::Error::custom(format!("context item {other} is not a string"))),
                })
                .collect::<Result<_, _>>()
                .map(RawContext),
            Value::Object(map) if map.is_empty() => Ok(RawContext(Vec::new())),
            Value::String(s) => Ok(RawContext(vec![s])),
            Value::Null => Ok(RawContext(Vec::new())),
            other => Err(de::Error::custom(format!("context must be a list, got {other}"))),
        }
    }
}

/// A JSON object read as an ordered list of entries, keeping duplicate keys.
struct OrderedEntries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> Result<Self::Value, M::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

type RawRelation = (String, Vec<String>, Vec<String>);

struct RawRelations(Vec<RawRelation>);

impl<'de> Deserialize<'de> for RawRelations {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawRelations;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a list or map of relations")
            }
            fn visit_seq<S: SeqAccess<'de>>(self, mut seq: S) -> Result<Self::Value, S::Error> {
                let mut out = Vec::new();
                while let Some(item) = seq.next_element::<OrderedEntries>()? {
                    out.extend(relation_item(item.0).map_err(de::Error::custom)?);
                }
                Ok(RawRelations(out))
            }
            fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> Result<Self::Value, M::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    entries.push((k, v));
                }
                named_relations(entries)
                    .map(RawRelations)
                    .map_err(de::Error::custom)
            }
            fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
                Ok(RawRelations(Vec::new()))
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// One element of a relation list: either `{name, entities, attributes}` or
/// an object mapping relation names to bodies.
fn relation_item(entries: Vec<(String, Value)>) -> Result<Vec<RawRelation>, SceneGraphError> {
    let is_canonical = entries
        .iter()
        .any(|(k, v)| k == "name" && v.is_string());
    if is_canonical {
        let mut name = String::new();
        let mut entities = Vec::new();
        let mut attributes = Vec::new();
        for (k, v) in &entries {
            match k.as_str() {
                "name" => name = v.as_str().unwrap_or_default().to_string(),
                "entities" => entities = string_list(v, "relation")?,
                "attributes" => attributes = string_list(v, "relation")?,
                _ => {}
            }
        }
        return Ok(vec![(name, entities, attributes)]);
    }
    named_relations(entries)
}

fn named_relations(entries: Vec<(String, Value)>) -> Result<Vec<RawRelation>, SceneGraphError> {
    entries
        .into_iter()
        .map(|(name, body)| {
            let Value::Object(map) = &body else {
                return Err(SceneGraphError::MalformedDocument(format!(
                    "relation `{name}` must be an object"
                )));
            };
            let entities = match map.get("entities") {
                Some(v) => string_list(v, &name)?,
                None => {
                    return Err(SceneGraphError::MalformedDocument(format!(
                        "relation `{name}` has no entities"
                    )))
                }
            };
            let attributes = match map.get("attributes") {
                Some(v) => string_list(v, &name)?,
                None => Vec::new(),
            };
            Ok((name, entities, attributes))
        })
        .collect()
}
