//! Test-tree orchestration: building nodes, labeling, metrics, reflection
//! with failure location, expansion, persistence and replay.

mod export;
mod metrics;
mod persist;
mod types;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::failure_location::{extract_triggers, locate, LocateError, Probe};
use crate::gateway::{Gateway, GatewayError, NodeContext, RecordLine};
use crate::generation::{
    build_model, build_scorer, prefilter, simulated_verdict, GenerationError, ImageModel, ModelConfig, Scorer,
};
use crate::scene_graph::SceneGraph;
use crate::verdict::Verdict;

pub use export::{export_analysis, write_analysis, AnalysisBundle};
pub use metrics::{color_class, node_metrics, session_metrics, ColorClass, CurvePoint, InputStats, NodeMetrics, SessionMetrics};
pub use persist::{SessionFile, SESSION_FILE_VERSION};
pub use types::{
    AuditEntry, ErrorCategory, Label, LabelSource, NodeId, NodeStatus, NodeTrace, ProbeRecord, SessionConfig,
    TestInput, TestNode, TestRecord, TestTree,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid node id {0:?}, expected <depth>.<width>")]
    InvalidNodeId(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("node {node} is {status:?}, cannot {action}")]
    InvalidTransition {
        node: NodeId,
        status: NodeStatus,
        action: &'static str,
    },
    #[error("node {0} is not accepting labels")]
    NodeNotLabeling(NodeId),
    #[error("record {0} has no simulated ground truth")]
    NotSimulated(String),
    #[error("node {0} is on the last level")]
    DepthLimit(NodeId),
    #[error("level {0} already holds the maximum number of nodes")]
    WidthLimit(usize),
    #[error("invalid expansion order: {0}")]
    InvalidOrder(String),
    #[error("session file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt session file: {0}")]
    CorruptFile(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

/// Backends a session talks to. Rebuilt from the config on load.
#[derive(Clone)]
pub struct Services {
    pub gateway: Arc<Gateway>,
    pub model: Arc<dyn ImageModel>,
    pub scorer: Option<Arc<dyn Scorer>>,
}

impl Services {
    pub fn from_config(config: &SessionConfig) -> Result<Self, SessionError> {
        let model_config = match &config.model {
            ModelConfig::Simulated { fault_spec } => {
                let mut spec = fault_spec.clone();
                spec.seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(config.seed);
                ModelConfig::Simulated { fault_spec: spec }
            }
            other => other.clone(),
        };
        Ok(Services {
            gateway: Arc::new(Gateway::from_config(config.gateway.clone())?),
            model: build_model(&model_config, config.timeout_secs)?,
            scorer: build_scorer(&config.scorer, &model_config, config.timeout_secs)?,
        })
    }
}

/// One verdict submission value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictInput {
    Pass,
    Fail,
    /// Use the simulated ground truth (simulated model only).
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelInput {
    Plain(VerdictInput),
    Detailed {
        verdict: VerdictInput,
        #[serde(default)]
        error_category: Option<ErrorCategory>,
    },
}

impl LabelInput {
    fn parts(self) -> (VerdictInput, Option<ErrorCategory>) {
        match self {
            LabelInput::Plain(v) => (v, None),
            LabelInput::Detailed { verdict, error_category } => (verdict, error_category),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeLabeler {
    /// Probe images are labeled from simulated ground truth as they appear.
    #[default]
    Simulated,
    /// Probe images wait for submitted verdicts; reflection suspends.
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub reflect: bool,
    pub expand: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum ReflectOutcome {
    Reflected,
    /// Waiting for verdicts on the listed probe records.
    Suspended { pending: Vec<String> },
}

/// A replayable mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    Build {
        node: NodeId,
    },
    SubmitVerdicts {
        node: NodeId,
        verdicts: BTreeMap<String, LabelInput>,
    },
    AutoLabel {
        node: NodeId,
    },
    Reflect {
        node: NodeId,
        #[serde(default)]
        labeler: ProbeLabeler,
    },
    Expand {
        node: NodeId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topics: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum CommandResult {
    Built { records: usize },
    Labeled { status: NodeStatus },
    Reflection(ReflectOutcome),
    Expanded { children: Vec<NodeId> },
}

enum ProbeStop {
    Suspend,
    Failed(SessionError),
}

pub struct Session {
    pub tree: TestTree,
    /// Successfully applied commands, in order.
    pub log: Vec<Command>,
    services: Services,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("tree", &self.tree).finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(root_topic: &str, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let services = Services::from_config(&config)?;
        Self::with_services(root_topic, config, services)
    }

    pub fn with_services(root_topic: &str, config: SessionConfig, services: Services) -> Result<Self, SessionError> {
        config.validate()?;
        let root_topic = root_topic.trim();
        if root_topic.is_empty() {
            return Err(SessionError::InvalidConfig("root topic is empty".into()));
        }
        let root = TestNode::new(NodeId::ROOT, root_topic.to_string(), None);
        let tree = TestTree {
            root_topic: root_topic.to_string(),
            config,
            nodes: BTreeMap::from([(NodeId::ROOT, root)]),
            bfs_order: vec![NodeId::ROOT],
            clock: 0,
        };
        Ok(Session {
            tree,
            log: Vec::new(),
            services,
        })
    }

    pub fn from_parts(tree: TestTree, log: Vec<Command>, services: Services) -> Self {
        Session { tree, log, services }
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn config(&self) -> &SessionConfig {
        &self.tree.config
    }

    /// Applies a command and appends it to the log when it succeeds.
    pub fn apply(&mut self, command: Command) -> Result<CommandResult, SessionError> {
        let result = match &command {
            Command::Build { node } => self.build_node(*node).map(|records| CommandResult::Built { records }),
            Command::SubmitVerdicts { node, verdicts } => {
                self.submit_verdicts(*node, verdicts).map(|status| CommandResult::Labeled { status })
            }
            Command::AutoLabel { node } => self.auto_label(*node).map(|status| CommandResult::Labeled { status }),
            Command::Reflect { node, labeler } => self.run_reflection(*node, *labeler).map(CommandResult::Reflection),
            Command::Expand { node, topics, order } => self
                .expand_node(*node, topics.clone(), order.clone())
                .map(|children| CommandResult::Expanded { children }),
        }?;
        self.log.push(command);
        Ok(result)
    }

    /// Rebuilds a session by applying `commands` to a fresh tree.
    pub fn replay(
        root_topic: &str,
        config: SessionConfig,
        services: Services,
        commands: &[Command],
    ) -> Result<Self, SessionError> {
        let mut s = Self::with_services(root_topic, config, services)?;
        for c in commands {
            s.apply(c.clone())?;
        }
        Ok(s)
    }

    fn parent_context(&self, node: &TestNode) -> (Vec<RecordLine>, Option<String>) {
        let Some(parent) = node.parent.and_then(|p| self.tree.nodes.get(&p)) else {
            return (Vec::new(), None);
        };
        (record_lines(parent), parent.reflection.clone())
    }

    /// Generates inputs and images for a draft node and opens it for labeling.
    /// Returns the number of records created. Errors leave the node in draft.
    pub fn build_node(&mut self, id: NodeId) -> Result<usize, SessionError> {
        let node = self.tree.node(id)?;
        if node.status != NodeStatus::Draft {
            return Err(SessionError::InvalidTransition {
                node: id,
                status: node.status,
                action: "build",
            });
        }
        let cfg = self.tree.config.clone();
        let (lines, reflection) = self.parent_context(node);
        let ctx = NodeContext {
            records: &lines,
            reflection: reflection.as_deref(),
        };
        let topic = node.topic.clone();
        let prior = self.tree.all_inputs();
        let texts = self.services.gateway.generate_inputs(&topic, &ctx, cfg.n_i, &prior)?;

        let mut prompts = Vec::with_capacity(texts.len());
        let mut records = Vec::with_capacity(texts.len() * cfg.n_x);
        let mut warnings = Vec::new();
        for (k, text) in texts.into_iter().enumerate() {
            let prompt_id = format!("{id}/p{k}");
            let images = self.services.model.generate(&prompt_id, &text, cfg.n_x)?;
            let marks = prefilter(self.services.scorer.as_deref(), &text, &images, cfg.prefilter_threshold);
            if let Some(w) = marks.warning {
                warnings.push(format!("prefilter skipped for {prompt_id}: {w}"));
            }
            for (j, image) in images.into_iter().enumerate() {
                let mut r = TestRecord::pending(format!("{prompt_id}/{j}"), image);
                r.provisional_fail = marks.provisional_fail[j];
                r.prefilter_score = marks.scores[j];
                records.push(r);
            }
            prompts.push(TestInput { id: prompt_id, text });
        }
        let count = records.len();
        let node = self.tree.node_mut(id)?;
        node.prompts = prompts;
        node.records = records;
        node.warnings = warnings;
        node.status = NodeStatus::Labeling;
        Ok(count)
    }

    /// Applies verdicts to main records (node labeling) or probe records
    /// (node reflecting). Returns the node status afterwards.
    pub fn submit_verdicts(
        &mut self,
        id: NodeId,
        verdicts: &BTreeMap<String, LabelInput>,
    ) -> Result<NodeStatus, SessionError> {
        let status = self.tree.node(id)?.status;
        let probes = match status {
            NodeStatus::Labeling => false,
            NodeStatus::Reflecting => true,
            _ => return Err(SessionError::NodeNotLabeling(id)),
        };
        // validate everything before touching any record
        {
            let node = self.tree.node(id)?;
            for (rid, input) in verdicts {
                let record = find_record(node, rid, probes).ok_or_else(|| SessionError::UnknownRecord(rid.clone()))?;
                if input.parts().0 == VerdictInput::Auto && record.image.hidden_pass.is_none() {
                    return Err(SessionError::NotSimulated(rid.clone()));
                }
            }
        }
        self.tree.clock += 1;
        let tick = self.tree.clock;
        let node = self.tree.node_mut(id)?;
        for (rid, input) in verdicts {
            let record = find_record_mut(node, rid, probes).expect("validated above");
            let (verdict, category) = input.parts();
            let (label, source) = match verdict {
                VerdictInput::Auto => (
                    Label::from(simulated_verdict(&record.image).expect("validated above")),
                    LabelSource::Simulated,
                ),
                VerdictInput::Pass => (Label::Pass, LabelSource::Human),
                VerdictInput::Fail if record.provisional_fail => (Label::Fail, LabelSource::PrefilterConfirmed),
                VerdictInput::Fail => (Label::Fail, LabelSource::Human),
            };
            set_label(record, label, source, category, tick);
        }
        self.settle(id)
    }

    /// Labels every pending record of the node (or of its probes while
    /// reflecting) from simulated ground truth.
    pub fn auto_label(&mut self, id: NodeId) -> Result<NodeStatus, SessionError> {
        let node = self.tree.node(id)?;
        let probes = match node.status {
            NodeStatus::Labeling => false,
            NodeStatus::Reflecting => true,
            _ => return Err(SessionError::NodeNotLabeling(id)),
        };
        let mut verdicts = BTreeMap::new();
        let pending: Vec<&TestRecord> = if probes {
            node.probes.iter().flat_map(|p| &p.records).filter(|r| r.is_pending()).collect()
        } else {
            node.records.iter().filter(|r| r.is_pending()).collect()
        };
        for r in pending {
            verdicts.insert(r.id.clone(), LabelInput::Plain(VerdictInput::Auto));
        }
        self.submit_verdicts(id, &verdicts)
    }

    /// Moves a fully labeled node to its next status.
    fn settle(&mut self, id: NodeId) -> Result<NodeStatus, SessionError> {
        let node = self.tree.node(id)?;
        if node.status == NodeStatus::Labeling && node.pending_records() == 0 {
            let d = self.decide_from(node);
            let next = if d.reflect || d.expand {
                NodeStatus::Labeled
            } else {
                NodeStatus::Closed
            };
            self.tree.node_mut(id)?.status = next;
        }
        Ok(self.tree.node(id)?.status)
    }

    fn decide_from(&self, node: &TestNode) -> Decision {
        decision_for(&self.tree.config, node)
    }

    /// Whether a labeled node should be reflected on and/or expanded.
    pub fn decide_next(&self, id: NodeId) -> Result<Decision, SessionError> {
        let node = self.tree.node(id)?;
        if matches!(node.status, NodeStatus::Draft | NodeStatus::Labeling) {
            return Err(SessionError::InvalidTransition {
                node: id,
                status: node.status,
                action: "decide before labeling completes",
            });
        }
        Ok(self.decide_from(node))
    }

    pub fn node_metrics(&self, id: NodeId) -> Result<NodeMetrics, SessionError> {
        Ok(node_metrics(self.tree.node(id)?, self.tree.config.rho_bug))
    }

    pub fn metrics(&self) -> SessionMetrics {
        session_metrics(&self.tree)
    }

    /// Runs failure location on every bug input of the node, then asks the
    /// gateway for a reflection over the main records and probe results.
    /// With an interactive labeler this suspends on the first unlabeled
    /// probe; calling again after labeling resumes by replaying the search.
    pub fn run_reflection(&mut self, id: NodeId, labeler: ProbeLabeler) -> Result<ReflectOutcome, SessionError> {
        let node = self.tree.node(id)?;
        match node.status {
            NodeStatus::Labeled | NodeStatus::Reflecting => {}
            status => {
                return Err(SessionError::InvalidTransition {
                    node: id,
                    status,
                    action: "reflect",
                })
            }
        }
        if !self.decide_from(node).reflect {
            return Err(SessionError::InvalidTransition {
                node: id,
                status: node.status,
                action: "reflect without failures",
            });
        }
        let m = node_metrics(node, self.tree.config.rho_bug);
        self.tree.node_mut(id)?.status = NodeStatus::Reflecting;

        for prompt_id in &m.bugs {
            if self.tree.node(id)?.traces.iter().any(|t| &t.prompt_id == prompt_id) {
                continue;
            }
            let text = m
                .inputs
                .iter()
                .find(|i| &i.prompt_id == prompt_id)
                .map(|i| i.text.clone())
                .unwrap_or_default();
            let graph = self.services.gateway.text_to_scene_graph(&text)?;
            match self.locate_input(id, prompt_id, &text, &graph, labeler)? {
                Some(trace) => self.tree.node_mut(id)?.traces.push(trace),
                None => {
                    let pending = self
                        .tree
                        .node(id)?
                        .probes
                        .iter()
                        .flat_map(|p| &p.records)
                        .filter(|r| r.is_pending())
                        .map(|r| r.id.clone())
                        .collect();
                    return Ok(ReflectOutcome::Suspended { pending });
                }
            }
        }

        let node = self.tree.node(id)?;
        let mut lines = record_lines(node);
        let mut seen = std::collections::BTreeSet::new();
        for t in &node.traces {
            for r in &t.trace.records[1..] {
                if seen.insert(r.combined_text.clone()) {
                    lines.push(RecordLine {
                        topic: node.topic.clone(),
                        prompt: r.combined_text.clone(),
                        score: r.verdict.score(),
                        fragment: true,
                    });
                }
            }
        }
        let topic = node.topic.clone();
        let reflection = self.services.gateway.reflect(&topic, &lines)?;
        let expand = self.decide_from(node).expand;
        let node = self.tree.node_mut(id)?;
        node.reflection = Some(reflection);
        node.status = if expand { NodeStatus::Reflected } else { NodeStatus::Closed };
        Ok(ReflectOutcome::Reflected)
    }

    /// `Ok(None)` when the search is waiting for probe labels.
    fn locate_input(
        &mut self,
        id: NodeId,
        prompt_id: &str,
        text: &str,
        graph: &SceneGraph,
        labeler: ProbeLabeler,
    ) -> Result<Option<NodeTrace>, SessionError> {
        let cfg = self.tree.config.clone();
        let mut probes = std::mem::take(&mut self.tree.node_mut(id)?.probes);
        let mut clock = self.tree.clock;
        let services = self.services.clone();
        let result = locate(graph, text, cfg.probe_budget, |combined: &SceneGraph| {
            let key = combined.canonical_json();
            let idx = match probes.iter().position(|p| p.combined.canonical_json() == key) {
                Some(i) => i,
                None => {
                    let probe_id = format!("{id}/q{}", probes.len());
                    let text = services
                        .gateway
                        .scene_graph_to_text(combined)
                        .map_err(|e| ProbeStop::Failed(e.into()))?;
                    let images = services
                        .model
                        .generate(&probe_id, &text, cfg.n_x)
                        .map_err(|e| ProbeStop::Failed(e.into()))?;
                    let records = images
                        .into_iter()
                        .enumerate()
                        .map(|(j, img)| TestRecord::pending(format!("{probe_id}/{j}"), img))
                        .collect();
                    probes.push(ProbeRecord {
                        id: probe_id,
                        combined: combined.clone(),
                        text,
                        records,
                    });
                    probes.len() - 1
                }
            };
            let probe = &mut probes[idx];
            if labeler == ProbeLabeler::Simulated && probe.records.iter().any(|r| r.is_pending()) {
                clock += 1;
                for r in probe.records.iter_mut().filter(|r| r.is_pending()) {
                    let v = simulated_verdict(&r.image).ok_or_else(|| ProbeStop::Failed(SessionError::NotSimulated(r.id.clone())))?;
                    set_label(r, v.into(), LabelSource::Simulated, None, clock);
                }
            }
            if probe.records.iter().any(|r| r.is_pending()) {
                return Err(ProbeStop::Suspend);
            }
            let passes = probe.records.iter().filter(|r| r.label == Label::Pass).count();
            let rate = passes as f64 / probe.records.len() as f64;
            Ok(Probe {
                verdict: Verdict::from_pass(rate >= cfg.rho_bug),
                text: probe.text.clone(),
            })
        });
        self.tree.clock = clock;
        self.tree.node_mut(id)?.probes = probes;
        match result {
            Ok(trace) => Ok(Some(NodeTrace {
                prompt_id: prompt_id.to_string(),
                triggers: extract_triggers(&trace),
                trace,
            })),
            Err(LocateError::Probe(ProbeStop::Suspend)) => Ok(None),
            Err(LocateError::Probe(ProbeStop::Failed(e))) => Err(e),
            Err(LocateError::InvalidRoot) => Err(GatewayError::EmptyInput.into()),
        }
    }

    /// Creates child nodes for proposed (or substituted) topics. `order` is
    /// a permutation of the topic indices giving the processing order.
    pub fn expand_node(
        &mut self,
        id: NodeId,
        topics: Option<Vec<String>>,
        order: Option<Vec<usize>>,
    ) -> Result<Vec<NodeId>, SessionError> {
        let node = self.tree.node(id)?;
        let decision = match node.status {
            NodeStatus::Labeled | NodeStatus::Reflected => self.decide_from(node),
            status => {
                return Err(SessionError::InvalidTransition {
                    node: id,
                    status,
                    action: "expand",
                })
            }
        };
        if id.level() >= self.tree.config.d_max {
            return Err(SessionError::DepthLimit(id));
        }
        if !decision.expand {
            return Err(SessionError::InvalidTransition {
                node: id,
                status: node.status,
                action: "expand below the pass-rate threshold",
            });
        }
        if decision.reflect && node.status == NodeStatus::Labeled {
            return Err(SessionError::InvalidTransition {
                node: id,
                status: node.status,
                action: "expand before reflecting",
            });
        }
        let cfg = self.tree.config.clone();
        let child_depth = id.depth + 1;
        let capacity = cfg
            .w_max
            .map(|w| w.saturating_sub(self.tree.width_at(child_depth)))
            .unwrap_or(usize::MAX);
        if capacity == 0 {
            return Err(SessionError::WidthLimit(child_depth + 1));
        }
        let mut topics = match topics {
            Some(t) => {
                let t: Vec<String> = t.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                if t.is_empty() {
                    return Err(SessionError::InvalidOrder("no topics given".into()));
                }
                t
            }
            None => {
                let lines = record_lines(node);
                let ctx = NodeContext {
                    records: &lines,
                    reflection: node.reflection.as_deref(),
                };
                self.services.gateway.generate_topics(&node.topic, &ctx, cfg.n_t)?
            }
        };
        let order = match order {
            Some(o) => {
                let mut sorted = o.clone();
                sorted.sort_unstable();
                if sorted != (0..topics.len()).collect::<Vec<_>>() {
                    return Err(SessionError::InvalidOrder(format!(
                        "{o:?} is not a permutation of 0..{}",
                        topics.len()
                    )));
                }
                o
            }
            None => (0..topics.len()).collect(),
        };
        topics.truncate(capacity);
        let order: Vec<usize> = order.into_iter().filter(|&i| i < topics.len()).collect();

        let first_width = self.tree.width_at(child_depth);
        let ids: Vec<NodeId> = (0..topics.len()).map(|k| NodeId::new(child_depth, first_width + k)).collect();
        for (k, topic) in topics.into_iter().enumerate() {
            self.tree.nodes.insert(ids[k], TestNode::new(ids[k], topic, Some(id)));
        }
        let children: Vec<NodeId> = order.iter().map(|&k| ids[k]).collect();
        let node = self.tree.node_mut(id)?;
        node.children.extend(children.iter().copied());
        node.status = NodeStatus::Expanded;
        self.tree.bfs_order = self.tree.compute_bfs_order();
        Ok(children)
    }
}

fn find_record<'a>(node: &'a TestNode, rid: &str, probes: bool) -> Option<&'a TestRecord> {
    if probes {
        node.probes.iter().flat_map(|p| &p.records).find(|r| r.id == rid)
    } else {
        node.records.iter().find(|r| r.id == rid)
    }
}

fn find_record_mut<'a>(node: &'a mut TestNode, rid: &str, probes: bool) -> Option<&'a mut TestRecord> {
    if probes {
        node.probes.iter_mut().flat_map(|p| &mut p.records).find(|r| r.id == rid)
    } else {
        node.records.iter_mut().find(|r| r.id == rid)
    }
}

fn set_label(record: &mut TestRecord, label: Label, source: LabelSource, category: Option<ErrorCategory>, tick: u64) {
    record.label = label;
    record.source = Some(source);
    record.provisional_fail = false;
    if category.is_some() || label == Label::Pass {
        record.error_category = category;
    }
    record.labeled_at = Some(tick);
    record.history.push(AuditEntry { label, source, at: tick });
}

/// Labeled main records of a node as LLM record lines, one per image.
/// Reflect when the node has a bug or a low pass rate; expand while above the
/// stop-extension pass rate and not on the last level.
pub fn decision_for(cfg: &SessionConfig, node: &TestNode) -> Decision {
    let m = node_metrics(node, cfg.rho_bug);
    let apr = m.apr.unwrap_or(1.0);
    Decision {
        reflect: apr < cfg.theta_reflect || !m.bugs.is_empty(),
        expand: apr >= cfg.rho_expand && node.id.level() < cfg.d_max,
    }
}

pub fn record_lines(node: &TestNode) -> Vec<RecordLine> {
    let text: BTreeMap<&str, &str> = node.prompts.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
    node.records
        .iter()
        .filter_map(|r| {
            let v = r.label.verdict()?;
            Some(RecordLine {
                topic: node.topic.clone(),
                prompt: text.get(r.prompt_id.as_str()).copied().unwrap_or_default().to_string(),
                score: v.score(),
                fragment: false,
            })
        })
        .collect()
}
