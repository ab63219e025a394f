//! Divide-and-conquer localization of failure triggers over scene graphs.
//!
//! Starting from a failing graph, each queued fragment is split in two and
//! both halves are probed together with the fragment's locked context. A
//! failing half is explored further under the same lock. When both halves
//! pass, the failure needs material from both sides, so each half is explored
//! with the other half added to its lock.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::render_text;
use crate::scene_graph::{merge, SceneGraph, SceneGraphError};
use crate::verdict::Verdict;

pub const DEFAULT_PROBE_BUDGET: usize = 64;
pub const DEFAULT_BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LocateError<E> {
    #[error("cannot locate failures in an empty scene graph")]
    InvalidRoot,
    #[error("probe failed: {0}")]
    Probe(E),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BruteForceError {
    #[error("graph has {nodes} nodes, brute force limit is {limit}")]
    TooLarge { nodes: usize, limit: usize },
}

/// Result of probing one combined graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub verdict: Verdict,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub fragment: SceneGraph,
    pub locked: SceneGraph,
    pub combined: SceneGraph,
    pub combined_text: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationTrace {
    pub records: Vec<TraceRecord>,
    pub probe_count: usize,
    pub budget: usize,
    pub truncated: bool,
}

impl LocationTrace {
    pub fn root(&self) -> &TraceRecord {
        &self.records[0]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    /// A single node together with whatever it depends on, failing alone.
    Atomic,
    /// A failure that needs material from several independent parts.
    Combinational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTrigger {
    pub graph: SceneGraph,
    pub text: String,
    pub kind: TriggerKind,
    /// The trigger's own record first, then every recorded probe of a proper
    /// subgraph of it (all of which passed).
    pub supporting_records: Vec<usize>,
}

struct Locator<'a, F> {
    probe: F,
    budget: usize,
    memo: HashMap<String, Verdict>,
    trace: &'a mut LocationTrace,
}

impl<F, E> Locator<'_, F>
where
    F: FnMut(&SceneGraph) -> Result<Probe, E>,
{
    /// `Ok(None)` when a fresh probe is needed but the budget is spent.
    fn test(&mut self, fragment: &SceneGraph, locked: &SceneGraph) -> Result<Option<Verdict>, E> {
        let combined = merge(fragment, locked);
        let key = combined.canonical_json();
        if let Some(v) = self.memo.get(&key) {
            return Ok(Some(*v));
        }
        if self.trace.probe_count >= self.budget {
            return Ok(None);
        }
        let probe = (self.probe)(&combined)?;
        self.trace.probe_count += 1;
        self.memo.insert(key, probe.verdict);
        self.trace.records.push(TraceRecord {
            fragment: fragment.clone(),
            locked: locked.clone(),
            combined,
            combined_text: probe.text,
            verdict: probe.verdict,
        });
        Ok(Some(probe.verdict))
    }
}

/// Runs failure location from a root graph already known to fail.
///
/// Probes are memoized by the canonical form of the combined graph, so a
/// repeated combination costs no budget. Elementary fragments that still
/// have more than one node (an entity with one attribute, a bare relation)
/// are narrowed by dropping their top node.
pub fn locate<F, E>(
    root: &SceneGraph,
    root_text: impl Into<String>,
    budget: usize,
    probe: F,
) -> Result<LocationTrace, LocateError<E>>
where
    F: FnMut(&SceneGraph) -> Result<Probe, E>,
{
    if root.is_empty() {
        return Err(LocateError::InvalidRoot);
    }
    let mut trace = LocationTrace {
        records: vec![TraceRecord {
            fragment: root.clone(),
            locked: SceneGraph::new(),
            combined: root.clone(),
            combined_text: root_text.into(),
            verdict: Verdict::Fail,
        }],
        probe_count: 0,
        budget,
        truncated: false,
    };
    let mut locator = Locator {
        probe,
        budget,
        memo: HashMap::from([(root.canonical_json(), Verdict::Fail)]),
        trace: &mut trace,
    };

    let mut queue = VecDeque::from([(root.clone(), SceneGraph::new())]);
    'outer: while let Some((fragment, locked)) = queue.pop_front() {
        if fragment.node_count() <= 1 {
            continue;
        }
        match fragment.split() {
            Ok((first, second)) => {
                let mut verdicts = [Verdict::Pass; 2];
                for (slot, half) in verdicts.iter_mut().zip([&first, &second]) {
                    match locator.test(half, &locked).map_err(LocateError::Probe)? {
                        Some(v) => *slot = v,
                        None => {
                            locator.trace.truncated = true;
                            break 'outer;
                        }
                    }
                }
                if verdicts[0].is_fail() {
                    queue.push_back((first.clone(), locked.clone()));
                }
                if verdicts[1].is_fail() {
                    queue.push_back((second.clone(), locked.clone()));
                }
                if verdicts.iter().all(|v| v.is_pass()) {
                    let with_second = merge(&second, &locked);
                    let with_first = merge(&first, &locked);
                    queue.push_back((first, with_second));
                    queue.push_back((second, with_first));
                }
            }
            Err(SceneGraphError::Indivisible) => {
                let core = fragment.peel().expect("indivisible graphs peel");
                match locator.test(&core, &locked).map_err(LocateError::Probe)? {
                    Some(Verdict::Fail) => queue.push_back((core, locked)),
                    Some(Verdict::Pass) => {}
                    None => {
                        locator.trace.truncated = true;
                        break;
                    }
                }
            }
            Err(_) => {}
        }
    }
    if !queue.is_empty() && !trace.truncated {
        trace.truncated = true;
    }
    Ok(trace)
}

/// [`locate`] with a plain verdict oracle; probe texts come from the
/// rule-based renderer.
pub fn locate_with_oracle<O>(root: &SceneGraph, budget: usize, mut oracle: O) -> Result<LocationTrace, LocateError<std::convert::Infallible>>
where
    O: FnMut(&SceneGraph) -> Verdict,
{
    let root_text = render_text(root).unwrap_or_default();
    locate(root, root_text, budget, |g| {
        Ok(Probe {
            verdict: oracle(g),
            text: render_text(g).unwrap_or_default(),
        })
    })
}

/// Minimal failing records of a trace: a failing record is a trigger unless
/// another failing record's combined graph is a strict subgraph of it.
pub fn extract_triggers(trace: &LocationTrace) -> Vec<FailureTrigger> {
    let nodes: Vec<_> = trace.records.iter().map(|r| r.combined.nodes()).collect();
    let failing: Vec<usize> = (0..trace.records.len())
        .filter(|&i| trace.records[i].verdict.is_fail())
        .collect();
    let mut out = Vec::new();
    for &i in &failing {
        let strictly_inside = |j: usize| j != i && nodes[j].len() < nodes[i].len() && nodes[j].is_subset(&nodes[i]);
        if failing.iter().any(|&j| strictly_inside(j)) {
            continue;
        }
        let record = &trace.records[i];
        let kind = if record.locked.is_empty() && record.fragment.is_elementary() {
            TriggerKind::Atomic
        } else {
            TriggerKind::Combinational
        };
        let mut supporting = vec![i];
        supporting.extend((0..trace.records.len()).filter(|&j| strictly_inside(j)));
        out.push(FailureTrigger {
            graph: record.combined.clone(),
            text: record.combined_text.clone(),
            kind,
            supporting_records: supporting,
        });
    }
    out
}

/// Exhaustive oracle: probes every non-empty dependency-closed subgraph of
/// `root` and returns the inclusion-minimal failing ones, canonically sorted.
pub fn brute_force_minimal_failing<O>(
    root: &SceneGraph,
    mut oracle: O,
    size_limit: usize,
) -> Result<Vec<SceneGraph>, BruteForceError>
where
    O: FnMut(&SceneGraph) -> Verdict,
{
    let nodes: Vec<_> = root.nodes().into_iter().collect();
    let n = nodes.len();
    if n > size_limit || n >= usize::BITS as usize {
        return Err(BruteForceError::TooLarge {
            nodes: n,
            limit: size_limit,
        });
    }
    let index = |node: &crate::scene_graph::GraphNode| nodes.iter().position(|m| m == node);
    let dep_masks: Vec<usize> = nodes
        .iter()
        .map(|node| {
            node.dependencies()
                .iter()
                .filter_map(index)
                .fold(0usize, |m, j| m | (1 << j))
        })
        .collect();

    let mut failing_masks = Vec::new();
    for mask in 1usize..(1 << n) {
        let closed = (0..n).all(|i| mask & (1 << i) == 0 || mask & dep_masks[i] == dep_masks[i]);
        if !closed {
            continue;
        }
        let subset = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| nodes[i].clone())
            .collect();
        let g = SceneGraph::from_nodes(&subset).expect("closed subsets are valid graphs");
        if oracle(&g).is_fail() {
            failing_masks.push(mask);
        }
    }
    let minimal = failing_masks
        .iter()
        .filter(|&&m| !failing_masks.iter().any(|&o| o != m && o & m == o))
        .map(|&m| {
            let subset = (0..n)
                .filter(|i| m & (1 << i) != 0)
                .map(|i| nodes[i].clone())
                .collect();
            SceneGraph::from_nodes(&subset).expect("closed subsets are valid graphs")
        });
    let mut out: Vec<SceneGraph> = minimal.collect();
    out.sort_by_key(SceneGraph::canonical_json);
    Ok(out)
}
