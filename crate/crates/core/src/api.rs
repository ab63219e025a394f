//! HTTP service over sessions.
//!
//! Reads are served from a per-session snapshot of the tree. Mutations take
//! the session's writer lock without waiting; a second mutation that arrives
//! while one is running gets 409.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex as StdMutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::failure_location::{FailureTrigger, LocationTrace};
use crate::generation::ModelConfig;
use crate::session::{
    color_class, decision_for, node_metrics, session_metrics, AuditEntry, ColorClass, Command, Decision, ErrorCategory, Label, LabelInput,
    LabelSource, NodeId, NodeMetrics, NodeStatus, ProbeLabeler, Session, SessionConfig, SessionError, TestNode,
    TestRecord, TestTree, VerdictInput,
};

/// Key in a label submission that stands for every pending record.
pub const ALL_RECORDS: &str = "*";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("image {0} is simulated and has no bytes")]
    SimulatedImage(String),
    #[error("another command is running on session {0}")]
    Busy(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("image fetch failed: {0}")]
    ImageFetch(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownSession(_) | ApiError::UnknownImage(_) | ApiError::SimulatedImage(_) => StatusCode::NOT_FOUND,
            ApiError::Busy(_) => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::ImageFetch(_) => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Session(e) => match e {
                SessionError::UnknownNode(_) | SessionError::UnknownRecord(_) => StatusCode::NOT_FOUND,
                SessionError::Gateway(_) | SessionError::Generation(_) => StatusCode::BAD_GATEWAY,
                SessionError::Io(_) | SessionError::CorruptFile(_) | SessionError::VersionMismatch { .. } => {
                    StatusCode::INTERNAL_SERVER_ERROR
                }
                _ => StatusCode::BAD_REQUEST,
            },
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownSession(_) => "unknown_session",
            ApiError::UnknownImage(_) => "unknown_image",
            ApiError::SimulatedImage(_) => "simulated_image",
            ApiError::Busy(_) => "busy",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Unauthorized => "unauthorized",
            ApiError::ImageFetch(_) => "image_fetch",
            ApiError::Internal(_) => "internal",
            ApiError::Session(e) => match e {
                SessionError::InvalidConfig(_) => "invalid_config",
                SessionError::InvalidNodeId(_) => "invalid_node_id",
                SessionError::UnknownNode(_) => "unknown_node",
                SessionError::UnknownRecord(_) => "unknown_record",
                SessionError::InvalidTransition { .. } => "invalid_transition",
                SessionError::NodeNotLabeling(_) => "not_labeling",
                SessionError::NotSimulated(_) => "not_simulated",
                SessionError::DepthLimit(_) => "depth_limit",
                SessionError::WidthLimit(_) => "width_limit",
                SessionError::InvalidOrder(_) => "invalid_order",
                SessionError::Gateway(_) => "gateway",
                SessionError::Generation(_) => "generation",
                SessionError::VersionMismatch { .. } | SessionError::CorruptFile(_) | SessionError::Io(_) => "storage",
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    Interactive,
    Simulated,
}

impl SessionMode {
    fn of(config: &SessionConfig) -> Self {
        match config.model {
            ModelConfig::Simulated { .. } => SessionMode::Simulated,
            ModelConfig::Http { .. } => SessionMode::Interactive,
        }
    }
}

struct SessionSlot {
    id: String,
    created_at: u64,
    mode: SessionMode,
    writer: Arc<Mutex<Session>>,
    snapshot: RwLock<Arc<TestTree>>,
}

impl SessionSlot {
    fn new(id: String, created_at: u64, session: Session) -> Self {
        SessionSlot {
            id,
            created_at,
            mode: SessionMode::of(session.config()),
            snapshot: RwLock::new(Arc::new(session.tree.clone())),
            writer: Arc::new(Mutex::new(session)),
        }
    }

    fn tree(&self) -> Arc<TestTree> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Sessions are saved here after every command and loaded at startup.
    pub data_dir: Option<PathBuf>,
    /// When set, every request needs `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

struct Store {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    /// Successful mutation replies by (session id or "", idempotency key).
    replies: StdMutex<HashMap<(String, String), (StatusCode, Value)>>,
    http: reqwest::Client,
}

#[derive(Clone)]
pub struct AppState(Arc<Store>);

impl AppState {
    /// Creates the state and loads every session file in the data dir.
    /// Blocking: call before entering the async runtime or from a blocking task.
    pub fn open(config: ServiceConfig) -> Result<Self, ApiError> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &config.data_dir {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::Internal(format!("{}: {e}", dir.display())))?;
            for (id, created_at, session) in load_dir(dir)? {
                sessions.insert(id.clone(), Arc::new(SessionSlot::new(id, created_at, session)));
            }
        }
        Ok(AppState(Arc::new(Store {
            config,
            sessions: RwLock::new(sessions),
            replies: StdMutex::new(HashMap::new()),
            http: reqwest::Client::new(),
        })))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.0.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.0
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    fn cached(&self, scope: &str, key: Option<&str>) -> Option<Response> {
        let key = key?;
        let replies = self.0.replies.lock().expect("replies lock");
        replies
            .get(&(scope.to_string(), key.to_string()))
            .map(|(status, body)| (*status, Json(body.clone())).into_response())
    }

    fn remember(&self, scope: &str, key: Option<&str>, status: StatusCode, body: &Value) {
        if let Some(key) = key {
            self.0
                .replies
                .lock()
                .expect("replies lock")
                .insert((scope.to_string(), key.to_string()), (status, body.clone()));
        }
    }

    fn session_path(&self, id: &str) -> Option<PathBuf> {
        self.0.config.data_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }
}

fn load_dir(dir: &FsPath) -> Result<Vec<(String, u64, Session)>, ApiError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| ApiError::Internal(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let session = Session::load(&path).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
        let created_at = std::fs::metadata(&path)
            .and_then(|m| m.modified())
            .map(unix_secs)
            .unwrap_or(0);
        out.push((id, created_at, session));
    }
    Ok(out)
}

fn unix_secs(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn new_session_id() -> String {
    format!("s{:016x}", rand::random::<u64>())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/nodes/{d}/{w}", get(get_node))
        .route("/sessions/{id}/nodes/{d}/{w}/build", post(build_node))
        .route("/sessions/{id}/nodes/{d}/{w}/labels", post(submit_labels))
        .route("/sessions/{id}/nodes/{d}/{w}/reflect", post(reflect_node))
        .route("/sessions/{id}/nodes/{d}/{w}/expand", post(expand_node))
        .route("/images/{*reference}", get(get_image))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.0.config.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    root_topic: String,
    #[serde(default)]
    config: SessionConfig,
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let key = idempotency_key(&headers);
    if let Some(r) = state.cached("", key.as_deref()) {
        return r;
    }
    let result = async {
        let req: CreateBody = parse_body(&body)?;
        let id = new_session_id();
        let path = state.session_path(&id);
        let session = tokio::task::spawn_blocking(move || -> Result<Session, ApiError> {
            let s = Session::new(&req.root_topic, req.config)?;
            if let Some(p) = path {
                s.save(&p)?;
            }
            Ok(s)
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
        let slot = Arc::new(SessionSlot::new(id.clone(), unix_secs(SystemTime::now()), session));
        let body = json!({"session_id": id, "mode": slot.mode, "created_at": slot.created_at});
        state.0.sessions.write().expect("sessions lock").insert(id, slot);
        Ok::<_, ApiError>(body)
    }
    .await;
    match result {
        Ok(body) => {
            state.remember("", key.as_deref(), StatusCode::CREATED, &body);
            (StatusCode::CREATED, Json(body)).into_response()
        }
        Err(e) => e.into_response(),
    }
}

async fn list_sessions(State(state): State<AppState>) -> Response {
    let mut out = Vec::new();
    for id in state.session_ids() {
        if let Ok(slot) = state.slot(&id) {
            let tree = slot.tree();
            out.push(json!({
                "session_id": slot.id,
                "root_topic": tree.root_topic,
                "mode": slot.mode,
                "created_at": slot.created_at,
                "nodes": tree.nodes.len(),
            }));
        }
    }
    Json(json!({"sessions": out})).into_response()
}

/// Per-node summary in the tree view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: NodeId,
    pub depth: usize,
    pub width: usize,
    pub level: usize,
    pub topic: String,
    pub status: NodeStatus,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub apr: Option<f64>,
    pub afr: Option<f64>,
    /// Absent until the node has a labeled record.
    pub color: Option<ColorClass>,
    pub bugs: usize,
    pub pending_records: usize,
    pub probe_queue: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeView {
    pub session_id: String,
    pub root_topic: String,
    pub mode: SessionMode,
    pub created_at: u64,
    pub config: SessionConfig,
    pub bfs_order: Vec<NodeId>,
    pub nodes: Vec<NodeSummary>,
}

fn summarize_node(node: &TestNode, rho_bug: f64) -> NodeSummary {
    let m = node_metrics(node, rho_bug);
    NodeSummary {
        id: node.id,
        depth: node.id.depth,
        width: node.id.width,
        level: node.id.level(),
        topic: node.topic.clone(),
        status: node.status,
        parent: node.parent,
        children: node.children.clone(),
        apr: m.apr,
        afr: m.afr,
        color: m.apr.map(color_class),
        bugs: m.bugs.len(),
        pending_records: node.pending_records(),
        probe_queue: node.pending_probe_records(),
    }
}

async fn get_tree(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<TreeView>, ApiError> {
    let slot = state.slot(&id)?;
    let tree = slot.tree();
    let nodes = tree
        .bfs_order
        .iter()
        .map(|n| summarize_node(&tree.nodes[n], tree.config.rho_bug))
        .collect();
    Ok(Json(TreeView {
        session_id: slot.id.clone(),
        root_topic: tree.root_topic.clone(),
        mode: slot.mode,
        created_at: slot.created_at,
        config: tree.config.clone(),
        bfs_order: tree.bfs_order.clone(),
        nodes,
    }))
}

async fn get_metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let tree = state.slot(&id)?.tree();
    Ok(Json(session_metrics(&tree)).into_response())
}

/// A labeled or pending image as clients see it. Simulated ground truth is
/// deliberately absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordView {
    pub id: String,
    pub prompt_id: String,
    pub image_id: String,
    pub image_url: String,
    pub label: Label,
    pub source: Option<LabelSource>,
    pub provisional_fail: bool,
    pub prefilter_score: Option<f64>,
    pub error_category: Option<ErrorCategory>,
    pub labeled_at: Option<u64>,
    pub history: Vec<AuditEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptView {
    pub id: String,
    pub text: String,
    pub records: Vec<RecordView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeView {
    pub id: String,
    pub text: String,
    pub records: Vec<RecordView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceView {
    pub prompt_id: String,
    pub probe_count: usize,
    pub truncated: bool,
    pub triggers: Vec<FailureTrigger>,
    pub trace: LocationTrace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDetail {
    #[serde(flatten)]
    pub summary: NodeSummary,
    pub prompts: Vec<PromptView>,
    /// Ids of main records still waiting for a verdict.
    pub pending_records: Vec<String>,
    /// Probes with unlabeled images, in the order the search asked for them.
    pub probe_queue: Vec<ProbeView>,
    pub probes: Vec<ProbeView>,
    pub traces: Vec<TraceView>,
    pub reflection: Option<String>,
    pub warnings: Vec<String>,
    pub metrics: NodeMetrics,
    /// Present once labeling is complete.
    pub decision: Option<Decision>,
}

fn record_view(session_id: &str, r: &TestRecord) -> RecordView {
    RecordView {
        id: r.id.clone(),
        prompt_id: r.prompt_id.clone(),
        image_id: r.image.id.clone(),
        image_url: format!("/images/{session_id}/{}", encode_segment(&r.image.id)),
        label: r.label,
        source: r.source,
        provisional_fail: r.provisional_fail,
        prefilter_score: r.prefilter_score,
        error_category: r.error_category,
        labeled_at: r.labeled_at,
        history: r.history.clone(),
    }
}

/// Percent-encodes everything outside the unreserved set.
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn node_detail(session_id: &str, tree: &TestTree, node: &TestNode) -> NodeDetail {
    let rho_bug = tree.config.rho_bug;
    let view = |r: &TestRecord| record_view(session_id, r);
    let prompts = node
        .prompts
        .iter()
        .map(|p| PromptView {
            id: p.id.clone(),
            text: p.text.clone(),
            records: node.records.iter().filter(|r| r.prompt_id == p.id).map(view).collect(),
        })
        .collect();
    let probes: Vec<ProbeView> = node
        .probes
        .iter()
        .map(|p| ProbeView {
            id: p.id.clone(),
            text: p.text.clone(),
            records: p.records.iter().map(view).collect(),
        })
        .collect();
    let probe_queue = node
        .probes
        .iter()
        .zip(&probes)
        .filter(|(p, _)| p.records.iter().any(TestRecord::is_pending))
        .map(|(_, v)| v.clone())
        .collect();
    let decision = match node.status {
        NodeStatus::Draft | NodeStatus::Labeling => None,
        _ => Some(decision_for(&tree.config, node)),
    };
    NodeDetail {
        summary: summarize_node(node, rho_bug),
        prompts,
        pending_records: node.records.iter().filter(|r| r.is_pending()).map(|r| r.id.clone()).collect(),
        probe_queue,
        probes,
        traces: node
            .traces
            .iter()
            .map(|t| TraceView {
                prompt_id: t.prompt_id.clone(),
                probe_count: t.trace.probe_count,
                truncated: t.trace.truncated,
                triggers: t.triggers.clone(),
                trace: t.trace.clone(),
            })
            .collect(),
        reflection: node.reflection.clone(),
        warnings: node.warnings.clone(),
        metrics: node_metrics(node, rho_bug),
        decision,
    }
}

async fn get_node(
    State(state): State<AppState>,
    Path((id, d, w)): Path<(String, String, String)>,
) -> Result<Json<NodeDetail>, ApiError> {
    let slot = state.slot(&id)?;
    let node_id = parse_node(&d, &w)?;
    let tree = slot.tree();
    let node = tree.node(node_id)?;
    Ok(Json(node_detail(&slot.id, &tree, node)))
}

fn parse_node(d: &str, w: &str) -> Result<NodeId, ApiError> {
    format!("{d}.{w}")
        .parse::<NodeId>()
        .map_err(|_| ApiError::Session(SessionError::InvalidNodeId(format!("{d}/{w}"))))
}

/// Runs a command on the session's writer thread, refreshes the snapshot and
/// persists the session.
async fn run_command(
    state: &AppState,
    session_id: &str,
    headers: &HeaderMap,
    make: impl FnOnce(&Session) -> Result<Command, ApiError> + Send + 'static,
) -> Response {
    let key = idempotency_key(headers);
    if let Some(r) = state.cached(session_id, key.as_deref()) {
        return r;
    }
    let slot = match state.slot(session_id) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let Ok(mut guard) = slot.writer.clone().try_lock_owned() else {
        return ApiError::Busy(session_id.to_string()).into_response();
    };
    let path = state.session_path(session_id);
    let writer_slot = slot.clone();
    let outcome = tokio::task::spawn_blocking(move || -> Result<Value, ApiError> {
        let session = &mut *guard;
        let command = make(session)?;
        let result = session.apply(command)?;
        *writer_slot.snapshot.write().expect("snapshot lock") = Arc::new(session.tree.clone());
        if let Some(p) = path {
            session.save(&p)?;
        }
        serde_json::to_value(result).map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await
    .unwrap_or_else(|e| Err(ApiError::Internal(e.to_string())));
    match outcome {
        Ok(body) => {
            state.remember(session_id, key.as_deref(), StatusCode::OK, &body);
            (StatusCode::OK, Json(body)).into_response()
        }
        Err(e) => e.into_response(),
    }
}

async fn build_node(
    State(state): State<AppState>,
    Path((id, d, w)): Path<(String, String, String)>,
    headers: HeaderMap,
) -> Response {
    let node = match parse_node(&d, &w) {
        Ok(n) => n,
        Err(e) => return e.into_response(),
    };
    run_command(&state, &id, &headers, move |_| Ok(Command::Build { node })).await
}

async fn submit_labels(
    State(state): State<AppState>,
    Path((id, d, w)): Path<(String, String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let parsed = parse_node(&d, &w).and_then(|n| {
        let labels: BTreeMap<String, LabelInput> =
            serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        Ok((n, labels))
    });
    let (node, mut labels) = match parsed {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    run_command(&state, &id, &headers, move |session| {
        let Some(all) = labels.remove(ALL_RECORDS) else {
            return Ok(Command::SubmitVerdicts { node, verdicts: labels });
        };
        if !labels.is_empty() {
            return Err(ApiError::BadRequest(format!("{ALL_RECORDS:?} cannot be combined with record ids")));
        }
        match all {
            LabelInput::Plain(VerdictInput::Auto) => {
                if SessionMode::of(session.config()) != SessionMode::Simulated {
                    return Err(ApiError::BadRequest("auto labels need a simulated session".into()));
                }
                Ok(Command::AutoLabel { node })
            }
            verdict => {
                // the same verdict for every pending record of the node or its probes
                let n = session.tree.node(node)?;
                let pending: Vec<String> = match n.status {
                    NodeStatus::Reflecting => n
                        .probes
                        .iter()
                        .flat_map(|p| &p.records)
                        .filter(|r| r.is_pending())
                        .map(|r| r.id.clone())
                        .collect(),
                    _ => n.records.iter().filter(|r| r.is_pending()).map(|r| r.id.clone()).collect(),
                };
                Ok(Command::SubmitVerdicts {
                    node,
                    verdicts: pending.into_iter().map(|r| (r, verdict)).collect(),
                })
            }
        }
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReflectBody {
    #[serde(default)]
    labeler: Option<ProbeLabeler>,
}

async fn reflect_node(
    State(state): State<AppState>,
    Path((id, d, w)): Path<(String, String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let parsed = parse_node(&d, &w).and_then(|n| Ok((n, parse_body::<ReflectBody>(&body)?)));
    let (node, req) = match parsed {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    run_command(&state, &id, &headers, move |session| {
        let labeler = req.labeler.unwrap_or(match SessionMode::of(session.config()) {
            SessionMode::Simulated => ProbeLabeler::Simulated,
            SessionMode::Interactive => ProbeLabeler::Interactive,
        });
        Ok(Command::Reflect { node, labeler })
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpandBody {
    #[serde(default)]
    topics: Option<Vec<String>>,
    #[serde(default)]
    order: Option<Vec<usize>>,
}

async fn expand_node(
    State(state): State<AppState>,
    Path((id, d, w)): Path<(String, String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let parsed = parse_node(&d, &w).and_then(|n| Ok((n, parse_body::<ExpandBody>(&body)?)));
    let (node, req) = match parsed {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    run_command(&state, &id, &headers, move |_| {
        Ok(Command::Expand {
            node,
            topics: req.topics,
            order: req.order,
        })
    })
    .await
}

/// `/images/{session}/{image id}`: bytes for model-produced images.
async fn get_image(State(state): State<AppState>, Path(reference): Path<String>) -> Result<Response, ApiError> {
    let (sid, image_id) = reference
        .split_once('/')
        .ok_or_else(|| ApiError::UnknownImage(reference.clone()))?;
    let tree = state.slot(sid)?.tree();
    let image = tree
        .nodes
        .values()
        .flat_map(|n| n.records.iter().chain(n.probes.iter().flat_map(|p| &p.records)))
        .map(|r| &r.image)
        .find(|img| img.id == image_id)
        .ok_or_else(|| ApiError::UnknownImage(reference.clone()))?
        .clone();
    if image.is_simulated() {
        return Err(ApiError::SimulatedImage(image.id));
    }
    let (bytes, content_type) = if let Some(path) = image.uri.strip_prefix("file://") {
        let bytes = tokio::fs::read(path).await.map_err(|e| ApiError::ImageFetch(e.to_string()))?;
        (bytes, guess_content_type(path).to_string())
    } else if image.uri.starts_with("http://") || image.uri.starts_with("https://") {
        let resp = state
            .0
            .http
            .get(&image.uri)
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(|e| ApiError::ImageFetch(e.to_string()))?;
        let ct = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
            .unwrap_or_else(|| guess_content_type(&image.uri).to_string());
        let bytes = resp.bytes().await.map_err(|e| ApiError::ImageFetch(e.to_string()))?;
        (bytes.to_vec(), ct)
    } else {
        return Err(ApiError::ImageFetch(format!("unsupported image uri {}", image.uri)));
    };
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

fn guess_content_type(path: &str) -> &'static str {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else if lower.ends_with(".webp") {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
