//! C ABI over the treeval engine.
//!
//! Every fallible call returns a [`TreevalStatus`]. On failure the message is
//! kept per thread and fetched with [`treeval_last_error_message`]. Strings
//! handed out by this library are freed with [`treeval_string_free`]; graphs
//! and sessions with their own `_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use treeval::failure_location::{extract_triggers, locate, LocateError, Probe};
use treeval::render::render_text;
use treeval::session::{Command, Session, SessionConfig, SessionError};
use treeval::{merge, parse_scene_graph, SceneGraph, SceneGraphError, Verdict};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreevalStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    NotFound = 5,
    InvalidTransition = 6,
    BackendError = 7,
    IoError = 8,
    CallbackFailed = 9,
    Panic = 10,
}

/// Opaque scene graph handle.
pub struct TreevalSceneGraph(SceneGraph);

/// Opaque session handle.
pub struct TreevalSession(Session);

/// Probe callback for [`treeval_locate_json`]. Receives the combined graph as
/// canonical JSON and its rendered text. Returns 1 for pass, 0 for fail and a
/// negative value to abort the search.
pub type TreevalOracle =
    Option<unsafe extern "C" fn(graph_json: *const c_char, text: *const c_char, user_data: *mut c_void) -> c_int>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TreevalStatus, String);

impl From<SceneGraphError> for Failure {
    fn from(e: SceneGraphError) -> Self {
        let status = match e {
            SceneGraphError::MalformedDocument(_) => TreevalStatus::ParseError,
            _ => TreevalStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownNode(_) | SessionError::UnknownRecord(_) => TreevalStatus::NotFound,
            SessionError::InvalidTransition { .. }
            | SessionError::NodeNotLabeling(_)
            | SessionError::DepthLimit(_)
            | SessionError::WidthLimit(_) => TreevalStatus::InvalidTransition,
            SessionError::Gateway(_) | SessionError::Generation(_) => TreevalStatus::BackendError,
            SessionError::Io(_) => TreevalStatus::IoError,
            SessionError::CorruptFile(_) | SessionError::VersionMismatch { .. } => TreevalStatus::ParseError,
            _ => TreevalStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `body`, turning errors and panics into a status plus a stored message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> TreevalStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            TreevalStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            TreevalStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(TreevalStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TreevalStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn check_out<T>(out: *mut T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(TreevalStatus::NullArgument, format!("{what} is null")));
    }
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(TreevalStatus::NullArgument, format!("{what} is null")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn graph_out(g: SceneGraph) -> *mut TreevalSceneGraph {
    Box::into_raw(Box::new(TreevalSceneGraph(g)))
}

/// Message of the last failed call on this thread, or null. Free with
/// [`treeval_string_free`].
#[no_mangle]
pub extern "C" fn treeval_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(c) => c.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn treeval_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_scene_graph_parse(json: *const c_char, out: *mut *mut TreevalSceneGraph) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        let g = parse_scene_graph(read_str(json, "json")?)?;
        *out = graph_out(g);
        Ok(())
    })
}

/// Canonical JSON of the graph.
///
/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_scene_graph_serialize(
    graph: *const TreevalSceneGraph,
    out: *mut *mut c_char,
) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = into_c_string(handle(graph, "graph")?.0.canonical_json());
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_scene_graph_node_count(graph: *const TreevalSceneGraph, out: *mut usize) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = handle(graph, "graph")?.0.node_count();
        Ok(())
    })
}

/// Splits a graph into two halves. Atomic and empty graphs fail with
/// `InvalidArgument`.
///
/// # Safety
/// `graph` must be a live handle; `left` and `right` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn treeval_scene_graph_split(
    graph: *const TreevalSceneGraph,
    left: *mut *mut TreevalSceneGraph,
    right: *mut *mut TreevalSceneGraph,
) -> TreevalStatus {
    guard(|| {
        check_out(left, "left")?;
        check_out(right, "right")?;
        let (a, b) = handle(graph, "graph")?.0.split()?;
        *left = graph_out(a);
        *right = graph_out(b);
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_scene_graph_merge(
    a: *const TreevalSceneGraph,
    b: *const TreevalSceneGraph,
    out: *mut *mut TreevalSceneGraph,
) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = graph_out(merge(&handle(a, "a")?.0, &handle(b, "b")?.0));
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn treeval_scene_graph_free(graph: *mut TreevalSceneGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Runs failure location on a graph the caller already knows to fail. Writes
/// `{"triggers": [...], "trace": {...}}` to `out`.
///
/// # Safety
/// `graph_json` must be a NUL-terminated string, `oracle` a valid function
/// and `out` a valid pointer. `user_data` is passed through untouched.
#[no_mangle]
pub unsafe extern "C" fn treeval_locate_json(
    graph_json: *const c_char,
    budget: usize,
    oracle: TreevalOracle,
    user_data: *mut c_void,
    out: *mut *mut c_char,
) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        let oracle = oracle.ok_or_else(|| Failure(TreevalStatus::NullArgument, "oracle is null".into()))?;
        let root = parse_scene_graph(read_str(graph_json, "graph_json")?)?;
        let root_text = render_text(&root).unwrap_or_default();
        let trace = locate(&root, root_text, budget, |g| {
            let text = render_text(g).unwrap_or_default();
            let g_json = CString::new(g.canonical_json()).expect("json has no nul");
            let c_text = CString::new(text.replace('\0', " ")).expect("nul bytes removed");
            match oracle(g_json.as_ptr(), c_text.as_ptr(), user_data) {
                1 => Ok(Probe { verdict: Verdict::Pass, text }),
                0 => Ok(Probe { verdict: Verdict::Fail, text }),
                code => Err(Failure(TreevalStatus::CallbackFailed, format!("oracle returned {code}"))),
            }
        })
        .map_err(|e| match e {
            LocateError::InvalidRoot => Failure(TreevalStatus::InvalidArgument, "graph is empty".into()),
            LocateError::Probe(f) => f,
        })?;
        let body = serde_json::json!({"triggers": extract_triggers(&trace), "trace": trace});
        *out = into_c_string(body.to_string());
        Ok(())
    })
}

fn session_out(s: Session) -> *mut TreevalSession {
    Box::into_raw(Box::new(TreevalSession(s)))
}

/// Creates a session. `config_json` may be null for defaults.
///
/// # Safety
/// `root_topic` must be a NUL-terminated string, `config_json` null or one,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_session_new(
    root_topic: *const c_char,
    config_json: *const c_char,
    out: *mut *mut TreevalSession,
) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        let topic = read_str(root_topic, "root_topic")?;
        let config: SessionConfig = if config_json.is_null() {
            SessionConfig::default()
        } else {
            serde_json::from_str(read_str(config_json, "config_json")?)
                .map_err(|e| Failure(TreevalStatus::ParseError, e.to_string()))?
        };
        *out = session_out(Session::new(topic, config)?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_session_load(path: *const c_char, out: *mut *mut TreevalSession) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = session_out(Session::load(Path::new(read_str(path, "path")?))?);
        Ok(())
    })
}

/// Applies one command (`{"op": "build", "node": "0.0"}` and so on) and
/// writes the result JSON to `out`.
///
/// # Safety
/// `session` must be a live handle, `command_json` a NUL-terminated string
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_session_apply(
    session: *mut TreevalSession,
    command_json: *const c_char,
    out: *mut *mut c_char,
) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        let s = session
            .as_mut()
            .ok_or_else(|| Failure(TreevalStatus::NullArgument, "session is null".into()))?;
        let command: Command = serde_json::from_str(read_str(command_json, "command_json")?)
            .map_err(|e| Failure(TreevalStatus::ParseError, e.to_string()))?;
        let result = s.0.apply(command)?;
        *out = into_c_string(serde_json::to_string(&result).expect("result serializes"));
        Ok(())
    })
}

/// Session-wide pass rates, bug count and curve as JSON.
///
/// # Safety
/// `session` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn treeval_session_metrics(session: *const TreevalSession, out: *mut *mut c_char) -> TreevalStatus {
    guard(|| {
        check_out(out, "out")?;
        let m = handle(session, "session")?.0.metrics();
        *out = into_c_string(serde_json::to_string(&m).expect("metrics serialize"));
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn treeval_session_save(session: *const TreevalSession, path: *const c_char) -> TreevalStatus {
    guard(|| {
        let s = handle(session, "session")?;
        s.0.save(Path::new(read_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `session` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn treeval_session_free(session: *mut TreevalSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
