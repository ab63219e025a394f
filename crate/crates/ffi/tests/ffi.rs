use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::ptr;

use serde_json::Value;
use treeval_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a library string.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    treeval_string_free(p);
    s
}

unsafe fn last_error() -> String {
    take(treeval_last_error_message())
}

const KIMONO: &str = include_str!("../../core/fixtures/graphs/kimono.json");

unsafe fn parse(json: &str) -> *mut TreevalSceneGraph {
    let mut g = ptr::null_mut();
    assert_eq!(treeval_scene_graph_parse(cstr(json).as_ptr(), &mut g), TreevalStatus::Ok);
    g
}

unsafe fn serialize(g: *const TreevalSceneGraph) -> String {
    let mut out = ptr::null_mut();
    assert_eq!(treeval_scene_graph_serialize(g, &mut out), TreevalStatus::Ok);
    take(out)
}

#[test]
fn graph_round_trip_split_and_merge() {
    unsafe {
        let g = parse(KIMONO);
        let mut n = 0usize;
        assert_eq!(treeval_scene_graph_node_count(g, &mut n), TreevalStatus::Ok);
        assert_eq!(n, 8);
        let canonical = serialize(g);
        let again = parse(&canonical);
        assert_eq!(serialize(again), canonical);

        let (mut l, mut r) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(treeval_scene_graph_split(g, &mut l, &mut r), TreevalStatus::Ok);
        let (mut nl, mut nr) = (0, 0);
        treeval_scene_graph_node_count(l, &mut nl);
        treeval_scene_graph_node_count(r, &mut nr);
        assert!(nl > 0 && nr > 0);
        let mut m = ptr::null_mut();
        assert_eq!(treeval_scene_graph_merge(l, r, &mut m), TreevalStatus::Ok);
        assert_eq!(serialize(m), canonical);

        for h in [g, again, l, r, m] {
            treeval_scene_graph_free(h);
        }
        treeval_scene_graph_free(ptr::null_mut());
    }
}

#[test]
fn errors_come_back_as_codes_with_messages() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(treeval_scene_graph_parse(cstr("{oops").as_ptr(), &mut g), TreevalStatus::ParseError);
        assert!(g.is_null());
        assert!(last_error().contains("malformed"));

        assert_eq!(treeval_scene_graph_parse(ptr::null(), &mut g), TreevalStatus::NullArgument);
        assert_eq!(treeval_scene_graph_parse(cstr(KIMONO).as_ptr(), ptr::null_mut()), TreevalStatus::NullArgument);

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(treeval_scene_graph_parse(bad.as_ptr().cast(), &mut g), TreevalStatus::InvalidUtf8);

        let atom = parse(r#"{"context":[],"entities":{"cat":{"attributes":[]}},"relations":[]}"#);
        let (mut l, mut r) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(treeval_scene_graph_split(atom, &mut l, &mut r), TreevalStatus::InvalidArgument);
        treeval_scene_graph_free(atom);

        // success clears the stored message
        let ok = parse(KIMONO);
        assert!(treeval_last_error_message().is_null());
        treeval_scene_graph_free(ok);
    }
}

unsafe extern "C" fn kimono_oracle(graph_json: *const c_char, _text: *const c_char, user: *mut c_void) -> c_int {
    *(user as *mut usize) += 1;
    let g: Value = serde_json::from_str(CStr::from_ptr(graph_json).to_str().unwrap()).unwrap();
    c_int::from(g["entities"].get("kimono").is_none())
}

unsafe extern "C" fn broken_oracle(_: *const c_char, _: *const c_char, _: *mut c_void) -> c_int {
    -1
}

#[test]
fn locate_calls_back_and_reports_the_trigger() {
    unsafe {
        let mut calls = 0usize;
        let mut out = ptr::null_mut();
        let status = treeval_locate_json(
            cstr(KIMONO).as_ptr(),
            64,
            Some(kimono_oracle),
            (&mut calls as *mut usize).cast(),
            &mut out,
        );
        assert_eq!(status, TreevalStatus::Ok);
        let v: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["trace"]["probe_count"].as_u64().unwrap() as usize, calls);
        let triggers = v["triggers"].as_array().unwrap();
        assert_eq!(triggers.len(), 1);
        assert_eq!(triggers[0]["text"], "A kimono.");

        let status = treeval_locate_json(cstr(KIMONO).as_ptr(), 64, Some(broken_oracle), ptr::null_mut(), &mut out);
        assert_eq!(status, TreevalStatus::CallbackFailed);
        assert!(last_error().contains("-1"));
        let status = treeval_locate_json(cstr(KIMONO).as_ptr(), 64, None, ptr::null_mut(), &mut out);
        assert_eq!(status, TreevalStatus::NullArgument);
    }
}

unsafe fn apply(s: *mut TreevalSession, cmd: &str) -> Result<Value, (TreevalStatus, String)> {
    let mut out = ptr::null_mut();
    match treeval_session_apply(s, cstr(cmd).as_ptr(), &mut out) {
        TreevalStatus::Ok => Ok(serde_json::from_str(&take(out)).unwrap()),
        status => Err((status, last_error())),
    }
}

#[test]
fn session_lifecycle() {
    unsafe {
        let config = r#"{"model":{"kind":"simulated","fault_spec":{"triggers":[{"tokens":["kimono"],"fail_prob":1.0}],"base_pass":1.0}}}"#;
        let mut s = ptr::null_mut();
        assert_eq!(
            treeval_session_new(cstr("clothing: kimono").as_ptr(), cstr(config).as_ptr(), &mut s),
            TreevalStatus::Ok
        );
        assert_eq!(apply(s, r#"{"op":"build","node":"0.0"}"#).unwrap()["records"], 20);
        assert_eq!(
            apply(s, r#"{"op":"build","node":"0.0"}"#).unwrap_err().0,
            TreevalStatus::InvalidTransition
        );
        assert_eq!(apply(s, r#"{"op":"build","node":"4.4"}"#).unwrap_err().0, TreevalStatus::NotFound);
        assert_eq!(apply(s, r#"{"op":"fly"}"#).unwrap_err().0, TreevalStatus::ParseError);
        assert_eq!(apply(s, r#"{"op":"auto_label","node":"0.0"}"#).unwrap()["status"], "labeled");

        let mut out = ptr::null_mut();
        assert_eq!(treeval_session_metrics(s, &mut out), TreevalStatus::Ok);
        let m: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(m["apr"], 0.0);
        assert_eq!(m["bugs"], 5);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let cpath = cstr(path.to_str().unwrap());
        assert_eq!(treeval_session_save(s, cpath.as_ptr()), TreevalStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(treeval_session_load(cpath.as_ptr(), &mut loaded), TreevalStatus::Ok);
        treeval_session_metrics(loaded, &mut out);
        assert_eq!(serde_json::from_str::<Value>(&take(out)).unwrap(), m);

        let missing = cstr("/nonexistent/session.json");
        assert_eq!(treeval_session_load(missing.as_ptr(), &mut loaded), TreevalStatus::IoError);

        treeval_session_free(s);
        treeval_session_free(loaded);
        treeval_session_free(ptr::null_mut());
    }
}

#[test]
fn session_config_errors() {
    unsafe {
        let mut s = ptr::null_mut();
        let status = treeval_session_new(cstr("x").as_ptr(), cstr(r#"{"n_i":0}"#).as_ptr(), &mut s);
        assert_eq!(status, TreevalStatus::InvalidArgument);
        let status = treeval_session_new(cstr("x").as_ptr(), cstr("not json").as_ptr(), &mut s);
        assert_eq!(status, TreevalStatus::ParseError);
        let status = treeval_session_new(cstr("clothing").as_ptr(), ptr::null(), &mut s);
        assert_eq!(status, TreevalStatus::Ok);
        treeval_session_free(s);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/treeval.h");
    let source = include_str!("../src/lib.rs");
    let exported: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .filter(|name| name.starts_with("treeval_"))
        .collect();
    assert_eq!(exported.len(), 15, "{exported:?}");
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("TREEVAL_STATUS_CALLBACK_FAILED = 9"));
}
