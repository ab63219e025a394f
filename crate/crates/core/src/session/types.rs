use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::failure_location::{FailureTrigger, LocationTrace, DEFAULT_PROBE_BUDGET};
use crate::gateway::GatewayConfig;
use crate::generation::{ImageRef, ModelConfig, ScorerConfig};
use crate::scene_graph::SceneGraph;
use crate::verdict::Verdict;

use super::SessionError;

/// Tree address: zero-based depth and width. The root is `0.0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub depth: usize,
    pub width: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { depth: 0, width: 0 };

    pub fn new(depth: usize, width: usize) -> Self {
        NodeId { depth, width }
    }

    /// One-based tree level: the root is level 1.
    pub fn level(self) -> usize {
        self.depth + 1
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.depth, self.width)
    }
}

impl FromStr for NodeId {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SessionError::InvalidNodeId(s.to_string());
        let (d, w) = s.split_once('.').ok_or_else(bad)?;
        Ok(NodeId {
            depth: d.parse().map_err(|_| bad())?,
            width: w.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub n_t: usize,
    pub n_i: usize,
    pub n_x: usize,
    /// Number of tree levels; nodes on the last level are never expanded.
    pub d_max: usize,
    pub w_max: Option<usize>,
    pub rho_expand: f64,
    pub rho_bug: f64,
    pub theta_reflect: f64,
    pub prefilter_threshold: f64,
    pub probe_budget: usize,
    /// Mixed into the simulated model's fault seed.
    pub seed: u64,
    pub timeout_secs: f64,
    pub gateway: GatewayConfig,
    pub model: ModelConfig,
    pub scorer: ScorerConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            n_t: 3,
            n_i: 5,
            n_x: 4,
            d_max: 3,
            w_max: None,
            rho_expand: 0.0,
            rho_bug: 0.75,
            theta_reflect: 0.75,
            prefilter_threshold: 0.0,
            probe_budget: DEFAULT_PROBE_BUDGET,
            seed: 0,
            timeout_secs: 60.0,
            gateway: GatewayConfig::default(),
            model: ModelConfig::default(),
            scorer: ScorerConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::InvalidConfig(m.to_string()));
        if self.n_t == 0 || self.n_i == 0 || self.n_x == 0 {
            return bad("n_t, n_i and n_x must be positive");
        }
        if self.d_max == 0 {
            return bad("d_max must be positive");
        }
        if self.w_max == Some(0) {
            return bad("w_max must be positive when set");
        }
        for (name, v) in [
            ("rho_expand", self.rho_expand),
            ("rho_bug", self.rho_bug),
            ("theta_reflect", self.theta_reflect),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must be in [0, 1]"));
            }
        }
        if self.prefilter_threshold.is_nan() {
            return bad("prefilter_threshold must be a number");
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return bad("timeout_secs must be positive");
        }
        self.gateway
            .validate()
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Draft,
    Labeling,
    Labeled,
    Reflecting,
    Reflected,
    Expanded,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[default]
    Pending,
    Pass,
    Fail,
}

impl Label {
    pub fn verdict(self) -> Option<Verdict> {
        match self {
            Label::Pending => None,
            Label::Pass => Some(Verdict::Pass),
            Label::Fail => Some(Verdict::Fail),
        }
    }
}

impl From<Verdict> for Label {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Label::Pass,
            Verdict::Fail => Label::Fail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Human,
    PrefilterConfirmed,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCategory {
    Object,
    Relation,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub label: Label,
    pub source: LabelSource,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub id: String,
    pub prompt_id: String,
    pub image: ImageRef,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<LabelSource>,
    /// Marked failing by the prefilter and awaiting confirmation.
    #[serde(default)]
    pub provisional_fail: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefilter_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
    /// Logical clock tick of the latest label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<AuditEntry>,
}

impl TestRecord {
    pub fn pending(id: String, image: ImageRef) -> Self {
        TestRecord {
            id,
            prompt_id: image.prompt_id.clone(),
            image,
            label: Label::Pending,
            source: None,
            provisional_fail: false,
            prefilter_score: None,
            error_category: None,
            labeled_at: None,
            history: Vec::new(),
        }
    }

    pub fn is_pending(&self) -> bool {
        self.label == Label::Pending
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestInput {
    pub id: String,
    pub text: String,
}

/// A failure-location probe: one combined graph rendered, generated and
/// labeled like a main input, but kept out of every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub id: String,
    pub combined: SceneGraph,
    pub text: String,
    pub records: Vec<TestRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub prompt_id: String,
    pub trace: LocationTrace,
    pub triggers: Vec<FailureTrigger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestNode {
    pub id: NodeId,
    pub topic: String,
    pub parent: Option<NodeId>,
    #[serde(default)]
    pub children: Vec<NodeId>,
    pub status: NodeStatus,
    #[serde(default)]
    pub prompts: Vec<TestInput>,
    #[serde(default)]
    pub records: Vec<TestRecord>,
    #[serde(default)]
    pub probes: Vec<ProbeRecord>,
    #[serde(default)]
    pub traces: Vec<NodeTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TestNode {
    pub fn new(id: NodeId, topic: String, parent: Option<NodeId>) -> Self {
        TestNode {
            id,
            topic,
            parent,
            children: Vec::new(),
            status: NodeStatus::Draft,
            prompts: Vec::new(),
            records: Vec::new(),
            probes: Vec::new(),
            traces: Vec::new(),
            reflection: None,
            warnings: Vec::new(),
        }
    }

    pub fn pending_records(&self) -> usize {
        self.records.iter().filter(|r| r.is_pending()).count()
    }

    pub fn pending_probe_records(&self) -> usize {
        self.probes.iter().flat_map(|p| &p.records).filter(|r| r.is_pending()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestTree {
    pub root_topic: String,
    pub config: SessionConfig,
    pub nodes: BTreeMap<NodeId, TestNode>,
    pub bfs_order: Vec<NodeId>,
    /// Logical clock advanced by every labeling action.
    pub clock: u64,
}

impl TestTree {
    pub fn node(&self, id: NodeId) -> Result<&TestNode, SessionError> {
        self.nodes.get(&id).ok_or(SessionError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut TestNode, SessionError> {
        self.nodes.get_mut(&id).ok_or(SessionError::UnknownNode(id))
    }

    /// Breadth-first enumeration following each node's child order.
    pub fn compute_bfs_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = std::collections::VecDeque::from([NodeId::ROOT]);
        while let Some(id) = queue.pop_front() {
            let Some(node) = self.nodes.get(&id) else { continue };
            order.push(id);
            queue.extend(node.children.iter().copied());
        }
        order
    }

    /// Every main-input text used so far, in node order.
    pub fn all_inputs(&self) -> Vec<String> {
        self.bfs_order
            .iter()
            .filter_map(|id| self.nodes.get(id))
            .flat_map(|n| n.prompts.iter().map(|p| p.text.clone()))
            .collect()
    }

    pub fn width_at(&self, depth: usize) -> usize {
        self.nodes.keys().filter(|id| id.depth == depth).count()
    }
}
