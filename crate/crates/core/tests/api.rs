use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tower::ServiceExt;
use treeval::api::{router, AppState, ServiceConfig};

fn app() -> Router {
    router(AppState::open(ServiceConfig::default()).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(app, method, uri, body, &[]).await
}

async fn call_with(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    headers: &[(&str, &str)],
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router, topic: &str, config: Value) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(json!({"root_topic": topic, "config": config}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

fn kimono_config() -> Value {
    json!({"model": {"kind": "simulated", "fault_spec": {
        "triggers": [{"tokens": ["kimono"], "fail_prob": 1.0}], "base_pass": 1.0, "seed": 5}}})
}

fn pending_ids(node: &Value) -> Vec<String> {
    node["pending_records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

async fn serve_stub(router: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    addr
}

/// Image model stub: answers `{refs}` pointing back at itself after `delay`.
async fn model_stub(delay: Duration) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = Router::new()
        .route(
            "/generate",
            post(move |Json(body): Json<Value>| async move {
                tokio::time::sleep(delay).await;
                let n = body["n"].as_u64().unwrap();
                let refs: Vec<String> = (0..n).map(|i| format!("http://{addr}/img/{i}.png")).collect();
                Json(json!({"refs": refs}))
            }),
        )
        .route("/img/{name}", get(|| async { ([("content-type", "image/png")], vec![0x89u8, b'P', b'N', b'G']) }));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn http_model_config(addr: SocketAddr) -> Value {
    json!({"model": {"kind": "http", "endpoint": format!("http://{addr}/generate")}})
}

#[tokio::test]
async fn create_build_label_all_pass_gives_apr_one() {
    let app = app();
    let id = create(&app, "clothing", json!({})).await;
    let (status, built) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    assert_eq!(status, StatusCode::OK, "{built}");
    assert_eq!(built, json!({"result": "built", "records": 20}));

    let (_, node) = call(&app, "GET", &format!("/sessions/{id}/nodes/0/0"), None).await;
    let labels: serde_json::Map<String, Value> = pending_ids(&node).into_iter().map(|r| (r, json!("pass"))).collect();
    assert_eq!(labels.len(), 20);
    let (status, res) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(Value::Object(labels))).await;
    assert_eq!(status, StatusCode::OK, "{res}");
    assert_eq!(res["status"], "labeled");

    let (status, m) = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["apr"], 1.0);
    assert_eq!(m["afr"], 0.0);
    assert_eq!(m["bugs"], 0);
    assert_eq!(m["curve"][0]["cumulative_bugs"], 0);
}

#[tokio::test]
async fn labels_outside_labeling_are_rejected() {
    let app = app();
    let id = create(&app, "clothing", json!({})).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(json!({"x": "pass"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "not_labeling");
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/expand"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn tree_reports_light_orange_for_apr_045() {
    let app = app();
    let id = create(&app, "clothing", json!({})).await;
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    let (_, node) = call(&app, "GET", &format!("/sessions/{id}/nodes/0/0"), None).await;
    let labels: serde_json::Map<String, Value> = pending_ids(&node)
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r, json!(if i < 9 { "pass" } else { "fail" })))
        .collect();
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(Value::Object(labels))).await;
    let (status, tree) = call(&app, "GET", &format!("/sessions/{id}/tree"), None).await;
    assert_eq!(status, StatusCode::OK);
    let root = &tree["nodes"][0];
    assert_eq!(root["id"], "0.0");
    assert_eq!(root["apr"], 0.45);
    assert_eq!(root["color"], "light_orange");
    assert_eq!(root["level"], 1);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let app = app();
    let (status, body) = call(&app, "GET", "/sessions/nope/tree", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_session");
    let id = create(&app, "clothing", json!({})).await;
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/nodes/2/7"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(json!({"bogus": "pass"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_record");
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/nodes/x/0"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn bad_bodies_are_400() {
    let app = app();
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"topic": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"root_topic": "x", "config": {"n_i": 0}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_config");
}

#[tokio::test]
async fn responses_never_carry_hidden_bits() {
    let app = app();
    let id = create(&app, "clothing: kimono", kimono_config()).await;
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(json!({"*": "auto"}))).await;
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/reflect"), Some(json!({"labeler": "simulated"}))).await;
    for path in ["tree", "metrics", "nodes/0/0"] {
        let (status, body) = call(&app, "GET", &format!("/sessions/{id}/{path}"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert!(!body.to_string().contains("hidden"), "{path}");
    }
}

#[tokio::test]
async fn auto_labels_run_the_simulated_evaluator() {
    let app = app();
    let id = create(&app, "clothing: kimono", kimono_config()).await;
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    let (status, res) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(json!({"*": "auto"}))).await;
    assert_eq!(status, StatusCode::OK, "{res}");
    let (_, node) = call(&app, "GET", &format!("/sessions/{id}/nodes/0/0"), None).await;
    assert_eq!(node["apr"], 0.0);
    assert_eq!(node["color"], "dark_orange");
    assert_eq!(node["bugs"], 5);
    assert_eq!(node["decision"], json!({"reflect": true, "expand": true}));
    assert_eq!(node["prompts"][0]["records"][0]["source"], "simulated");

    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/nodes/0/0/labels"),
        Some(json!({"*": "auto", "x": "pass"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
}

#[tokio::test]
async fn interactive_reflection_exposes_a_probe_queue() {
    let app = app();
    let id = create(&app, "clothing: kimono", kimono_config()).await;
    let base = format!("/sessions/{id}/nodes/0/0");
    call(&app, "POST", &format!("{base}/build"), None).await;
    call(&app, "POST", &format!("{base}/labels"), Some(json!({"*": "auto"}))).await;
    let (status, res) = call(&app, "POST", &format!("{base}/reflect"), Some(json!({"labeler": "interactive"}))).await;
    assert_eq!(status, StatusCode::OK, "{res}");
    assert_eq!(res["state"], "suspended");
    let (_, node) = call(&app, "GET", &base, None).await;
    assert_eq!(node["status"], "reflecting");
    let queue = node["probe_queue"].as_array().unwrap();
    assert!(!queue.is_empty());
    assert_eq!(queue[0]["records"].as_array().unwrap().len(), 4);
    let metrics_before = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await.1;

    // answer probes one batch at a time until the search finishes
    for _ in 0..200 {
        let (_, node) = call(&app, "GET", &base, None).await;
        if node["status"] != "reflecting" {
            break;
        }
        let (status, _) = call(&app, "POST", &format!("{base}/labels"), Some(json!({"*": "fail"}))).await;
        assert_eq!(status, StatusCode::OK);
        let (status, _) = call(&app, "POST", &format!("{base}/reflect"), Some(json!({"labeler": "interactive"}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, node) = call(&app, "GET", &base, None).await;
    assert_eq!(node["status"], "reflected");
    assert!(node["reflection"].is_string());
    assert!(!node["traces"].as_array().unwrap().is_empty());
    let metrics_after = call(&app, "GET", &format!("/sessions/{id}/metrics"), None).await.1;
    assert_eq!(metrics_before, metrics_after);
}

#[tokio::test]
async fn expand_takes_topics_and_order() {
    let app = app();
    let id = create(&app, "clothing", json!({})).await;
    let base = format!("/sessions/{id}/nodes/0/0");
    call(&app, "POST", &format!("{base}/build"), None).await;
    call(&app, "POST", &format!("{base}/labels"), Some(json!({"*": "auto"}))).await;
    let (status, res) = call(
        &app,
        "POST",
        &format!("{base}/expand"),
        Some(json!({"topics": ["clothing: hat", "clothing: coat", "clothing: scarf"], "order": [2, 0, 1]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{res}");
    assert_eq!(res["children"], json!(["1.2", "1.0", "1.1"]));
    let (_, tree) = call(&app, "GET", &format!("/sessions/{id}/tree"), None).await;
    let topics: Vec<&str> = tree["nodes"].as_array().unwrap()[1..]
        .iter()
        .map(|n| n["topic"].as_str().unwrap())
        .collect();
    assert_eq!(topics, ["clothing: scarf", "clothing: hat", "clothing: coat"]);
    assert_eq!(tree["nodes"][1]["color"], Value::Null);
    assert_eq!(tree["nodes"][1]["status"], "draft");
}

#[tokio::test]
async fn idempotency_key_replays_the_first_reply() {
    let app = app();
    let key = [("idempotency-key", "k-1")];
    let (s1, b1) = call_with(&app, "POST", "/sessions", Some(json!({"root_topic": "clothing"})), &key).await;
    let (s2, b2) = call_with(&app, "POST", "/sessions", Some(json!({"root_topic": "clothing"})), &key).await;
    assert_eq!((s1, &b1), (s2, &b2));
    let (_, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(list["sessions"].as_array().unwrap().len(), 1);

    let id = b1["session_id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/nodes/0/0/build");
    let key = [("idempotency-key", "b-1")];
    let (s1, b1) = call_with(&app, "POST", &uri, None, &key).await;
    let (s2, b2) = call_with(&app, "POST", &uri, None, &key).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!((s1, b1), (s2, b2));
    // without the key the retry is a second build
    let (s3, _) = call(&app, "POST", &uri, None).await;
    assert_eq!(s3, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let app = router(
        AppState::open(ServiceConfig {
            data_dir: None,
            token: Some("sesame".into()),
        })
        .unwrap(),
    );
    let (status, _) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_with(&app, "GET", "/sessions", None, &[("authorization", "Bearer nope")]).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_with(&app, "GET", "/sessions", None, &[("authorization", "Bearer sesame")]).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn sessions_survive_a_restart_from_the_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        token: None,
    };
    let first = router(AppState::open(config.clone()).unwrap());
    let id = create(&first, "clothing", json!({})).await;
    call(&first, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    call(&first, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(json!({"*": "auto"}))).await;
    let before = call(&first, "GET", &format!("/sessions/{id}/nodes/0/0"), None).await.1;

    let cfg = config.clone();
    let state = tokio::task::spawn_blocking(move || AppState::open(cfg)).await.unwrap().unwrap();
    assert_eq!(state.session_ids(), vec![id.clone()]);
    let second = router(state);
    let after = call(&second, "GET", &format!("/sessions/{id}/nodes/0/0"), None).await.1;
    assert_eq!(before, after);
    let (status, _) = call(&second, "POST", &format!("/sessions/{id}/nodes/0/0/expand"), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn simulated_images_are_404() {
    let app = app();
    let id = create(&app, "clothing", json!({})).await;
    call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    let (_, node) = call(&app, "GET", &format!("/sessions/{id}/nodes/0/0"), None).await;
    let url = node["prompts"][0]["records"][0]["image_url"].as_str().unwrap().to_string();
    let (status, body) = call(&app, "GET", &url, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "simulated_image");
    let (status, _) = call(&app, "GET", &format!("/images/{id}/missing"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn model_images_are_proxied_and_auto_needs_simulation() {
    let addr = model_stub(Duration::ZERO).await;
    let app = app();
    let id = create(&app, "clothing", http_model_config(addr)).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, node) = call(&app, "GET", &format!("/sessions/{id}/nodes/0/0"), None).await;
    let url = node["prompts"][0]["records"][0]["image_url"].as_str().unwrap().to_string();
    let req = Request::builder().uri(&url).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&bytes[..], &[0x89, b'P', b'N', b'G']);

    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(json!({"*": "auto"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/labels"), Some(json!({"*": "pass"}))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_mutation_gets_409() {
    let addr = model_stub(Duration::from_millis(150)).await;
    let app = app();
    let id = create(&app, "clothing", http_model_config(addr)).await;
    let uri = format!("/sessions/{id}/nodes/0/0/build");
    let slow = {
        let app = app.clone();
        let uri = uri.clone();
        tokio::spawn(async move { call(&app, "POST", &uri, None).await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/reflect"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    // reads keep working from the snapshot while the build runs
    let (status, tree) = call(&app, "GET", &format!("/sessions/{id}/tree"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tree["nodes"][0]["status"], "draft");
    let (status, _) = slow.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    let (_, tree) = call(&app, "GET", &format!("/sessions/{id}/tree"), None).await;
    assert_eq!(tree["nodes"][0]["status"], "labeling");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unreachable_model_leaves_node_in_draft() {
    let app = app();
    let id = create(&app, "clothing", json!({"model": {"kind": "http", "endpoint": "http://127.0.0.1:9/generate"}, "timeout_secs": 2.0})).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/0/0/build"), None).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{body}");
    assert_eq!(body["error"]["code"], "generation");
    let (_, tree) = call(&app, "GET", &format!("/sessions/{id}/tree"), None).await;
    assert_eq!(tree["nodes"][0]["status"], "draft");
}

mod http_backends {
    use super::*;
    use treeval::gateway::{BackendKind, Gateway, GatewayConfig, NodeContext};
    use treeval::generation::{HttpModel, HttpScorer, ImageModel, ImageRef, Scorer};

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn http_model_and_scorer_speak_json() {
        let stub = Router::new()
            .route(
                "/gen",
                post(|Json(b): Json<Value>| async move {
                    assert_eq!(b["seed"], 9);
                    let n = b["n"].as_u64().unwrap();
                    Json(json!({"refs": (0..n).map(|i| json!({"uri": format!("mem://{i}")})).collect::<Vec<_>>()}))
                }),
            )
            .route("/short", post(|| async { Json(json!({"refs": ["only-one"]})) }))
            .route(
                "/score",
                post(|Json(b): Json<Value>| async move {
                    let s = if b["ref"] == "mem://0" { 0.1 } else { 0.9 };
                    Json(json!({"score": s}))
                }),
            );
        let addr = serve_stub(stub).await;
        tokio::task::spawn_blocking(move || {
            let model = HttpModel::new(format!("http://{addr}/gen"), Some(9), 5.0).unwrap();
            let imgs: Vec<ImageRef> = model.generate("0.0/p0", "A red hat.", 3).unwrap();
            assert_eq!(imgs.len(), 3);
            assert_eq!(imgs[2].uri, "mem://2");
            assert_eq!(imgs[2].id, "0.0/p0:2");
            assert!(imgs.iter().all(|i| !i.is_simulated()));

            let short = HttpModel::new(format!("http://{addr}/short"), None, 5.0).unwrap();
            assert!(short.generate("p", "A red hat.", 2).is_err());

            let scorer = HttpScorer::new(format!("http://{addr}/score"), 5.0).unwrap();
            assert_eq!(scorer.score("A red hat.", &imgs[0]).unwrap(), 0.1);
            let marks = treeval::generation::prefilter(Some(&scorer), "A red hat.", &imgs, 0.3);
            assert_eq!(marks.provisional_fail, vec![true, false, false]);
        })
        .await
        .unwrap();
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn chat_completion_backend_generates_topics() {
        let stub = Router::new().route(
            "/v1/chat/completions",
            post(|Json(b): Json<Value>| async move {
                assert_eq!(b["model"], "stub-model");
                let prompt = b["messages"][0]["content"].as_str().unwrap().to_string();
                let content = if prompt.contains("Next Test Topic:") {
                    "Next Test Topic: clothing: hats\nNext Test Topic: clothing: boots\nNext Test Topic: clothing: robes"
                } else {
                    "yes"
                };
                Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
            }),
        );
        let addr = serve_stub(stub).await;
        tokio::task::spawn_blocking(move || {
            let gw = Gateway::from_config(GatewayConfig {
                backend: BackendKind::Real,
                endpoint: Some(format!("http://{addr}/v1/chat/completions")),
                model: "stub-model".into(),
                timeout_secs: 5.0,
                ..GatewayConfig::default()
            })
            .unwrap();
            let ctx = NodeContext {
                records: &[],
                reflection: None,
            };
            let topics = gw.generate_topics("clothing", &ctx, 3).unwrap();
            assert_eq!(topics, ["clothing: hats", "clothing: boots", "clothing: robes"]);
        })
        .await
        .unwrap();
    }
}
