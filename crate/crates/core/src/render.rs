//! Deterministic rule-based conversion between scene graphs and sentences.
//!
//! This is the offline stand-in for the LLM-backed converters. The grammar is
//! deliberately small so that `parse_text(render_text(g))` recovers `g` for
//! graphs whose names and attributes are single words:
//!
//! * an entity is introduced as `a|an <attrs...> <name>` and later referred
//!   to as `the <name>`;
//! * a relation is a clause `<e1> <name> [(<attrs>)] <e2> [and <e3>...]`;
//! * free entities are their own clauses, clauses are joined with `, `;
//! * context strings follow the last clause and must read like
//!   `<preposition> the <noun>` to be recognized on the way back.

use crate::scene_graph::{Relation, SceneGraph, SceneGraphError};

pub fn render_text(g: &SceneGraph) -> Result<String, SceneGraphError> {
    if g.is_empty() {
        return Err(SceneGraphError::EmptyGraph);
    }
    let mut introduced: Vec<&str> = Vec::new();
    let mut clauses: Vec<String> = Vec::new();

    for r in g.relations() {
        let mut clause = entity_phrase(g, &r.entities[0], &mut introduced);
        clause.push(' ');
        clause.push_str(&r.name);
        if !r.attributes.is_empty() {
            clause.push_str(&format!(" ({})", r.attributes.join(" ")));
        }
        for (i, e) in r.entities[1..].iter().enumerate() {
            clause.push_str(if i == 0 { " " } else { " and " });
            clause.push_str(&entity_phrase(g, e, &mut introduced));
        }
        clauses.push(clause);
    }
    for name in g.entities().keys() {
        if !introduced.contains(&name.as_str()) {
            clauses.push(entity_phrase(g, name, &mut introduced));
        }
    }

    let mut text = clauses.join(", ");
    for (i, c) in g.context().iter().enumerate() {
        if text.is_empty() {
            text.push_str(c);
        } else if i == 0 && !clauses.is_empty() {
            text.push(' ');
            text.push_str(c);
        } else {
            text.push_str(", ");
            text.push_str(c);
        }
    }
    let mut chars = text.chars();
    let mut out = match chars.next() {
        Some(first) if !clauses.is_empty() => first.to_uppercase().chain(chars).collect(),
        _ => text,
    };
    out.push('.');
    Ok(out)
}

fn entity_phrase<'g>(g: &'g SceneGraph, name: &str, introduced: &mut Vec<&'g str>) -> String {
    let Some((key, attrs)) = g.entities().get_key_value(name) else {
        return format!("a {name}");
    };
    if introduced.contains(&key.as_str()) {
        return format!("the {name}");
    }
    introduced.push(key);
    let first = attrs.first().map(String::as_str).unwrap_or(name);
    let mut words = vec![article(first).to_string()];
    words.extend(attrs.iter().cloned());
    words.push(name.to_string());
    words.join(" ")
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn is_indefinite(word: &str) -> bool {
    matches!(word.to_ascii_lowercase().as_str(), "a" | "an")
}

fn is_definite(word: &str) -> bool {
    word.eq_ignore_ascii_case("the")
}

/// Inverse of [`render_text`]. Text outside the grammar degrades gracefully:
/// unrecognized clause tails become context strings.
pub fn parse_text(text: &str) -> Result<SceneGraph, SceneGraphError> {
    let body = text.trim().trim_matches('"').trim().trim_end_matches('.').trim();
    if body.is_empty() {
        return Err(SceneGraphError::EmptyGraph);
    }
    let mut g = SceneGraph::new();
    for clause in body.split(", ") {
        let tokens: Vec<&str> = clause.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        ClauseParser {
            tokens: &tokens,
            pos: 0,
            graph: &mut g,
        }
        .run()?;
    }
    Ok(g)
}

struct ClauseParser<'a, 'g> {
    tokens: &'a [&'a str],
    pos: usize,
    graph: &'g mut SceneGraph,
}

impl ClauseParser<'_, '_> {
    fn run(mut self) -> Result<(), SceneGraphError> {
        if !self.starts_entity(self.pos) {
            self.graph.add_context(self.tokens.join(" "));
            return Ok(());
        }
        let subject = self.entity_phrase();
        loop {
            if self.pos >= self.tokens.len() {
                return Ok(());
            }
            if !self.connects(self.pos) {
                self.graph.add_context(self.tokens[self.pos..].join(" "));
                return Ok(());
            }
            let name = self.tokens[self.pos].to_string();
            self.pos += 1;
            let attrs = self.relation_attributes();
            let mut endpoints = vec![subject.clone()];
            endpoints.push(self.entity_phrase());
            while self.pos + 1 < self.tokens.len()
                && self.tokens[self.pos] == "and"
                && self.starts_entity(self.pos + 1)
            {
                self.pos += 1;
                endpoints.push(self.entity_phrase());
            }
            self.graph.add_relation(Relation::new(name, endpoints, attrs))?;
        }
    }

    /// An entity phrase starts here: an indefinite article, or `the` followed
    /// by an already-known entity.
    fn starts_entity(&self, i: usize) -> bool {
        let Some(t) = self.tokens.get(i) else {
            return false;
        };
        if is_indefinite(t) {
            return self.tokens.len() > i + 1;
        }
        is_definite(t)
            && self
                .tokens
                .get(i + 1)
                .is_some_and(|n| self.graph.entities().contains_key(*n))
    }

    /// The token at `i` links the previous phrase to another entity.
    fn connects(&self, i: usize) -> bool {
        let next = i + 1;
        match self.tokens.get(next) {
            Some(t) if t.starts_with('(') => {
                let close = (next..self.tokens.len()).find(|&j| self.tokens[j].ends_with(')'));
                close.is_some_and(|j| self.starts_entity(j + 1))
            }
            Some(_) => self.starts_entity(next),
            None => false,
        }
    }

    fn relation_attributes(&mut self) -> Vec<String> {
        let Some(t) = self.tokens.get(self.pos) else {
            return Vec::new();
        };
        if !t.starts_with('(') {
            return Vec::new();
        }
        let mut words = Vec::new();
        while let Some(t) = self.tokens.get(self.pos) {
            self.pos += 1;
            let w = t.trim_start_matches('(');
            let done = w.ends_with(')');
            let w = w.trim_end_matches(')');
            if !w.is_empty() {
                words.push(w.to_string());
            }
            if done {
                break;
            }
        }
        words
    }

    /// Consumes an entity phrase and returns the entity name. The name is the
    /// last word before a connector or the clause end.
    fn entity_phrase(&mut self) -> String {
        let t = self.tokens[self.pos];
        if is_definite(t) {
            let name = self.tokens[self.pos + 1].to_string();
            self.pos += 2;
            return name;
        }
        let start = self.pos + 1;
        let mut end = start;
        while end + 1 < self.tokens.len() && !self.connects(end + 1) && !self.ends_phrase(end + 1) {
            end += 1;
        }
        let name = self.tokens[end].to_string();
        let attrs: Vec<String> = self.tokens[start..end].iter().map(|s| s.to_string()).collect();
        self.graph.add_entity(name.clone(), attrs);
        self.pos = end + 1;
        name
    }

    /// `and` followed by a new entity closes the current phrase; so does a
    /// context tail such as `across the room`.
    fn ends_phrase(&self, i: usize) -> bool {
        if self.tokens[i] == "and" && self.starts_entity(i + 1) {
            return true;
        }
        self.tokens
            .get(i + 1)
            .is_some_and(|t| is_definite(t) || is_indefinite(t))
    }
}
