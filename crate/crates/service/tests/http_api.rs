mod support;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use slideloc_service::{parse_events_csv, router, MemoryStore, Service};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ctype)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn setup() -> (Router, String, String) {
    let app = router(Arc::new(Service::new(Arc::new(MemoryStore::new()))));
    let v = support::video(3);
    let body = json!({
        "manifest": v.manifest,
        "outline": v.outline,
        "keyframes": v.images.iter().map(|i| base64::engine::general_purpose::STANDARD.encode(i)).collect::<Vec<_>>(),
    });
    let (status, bytes, _) = call(&app, "POST", "/videos", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);
    let vid = json_of(&bytes)["id"].as_str().unwrap().to_string();
    let (status, bytes, _) = call(&app, "POST", "/sessions", Some(json!({ "video_id": vid }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = json_of(&bytes)["id"].as_str().unwrap().to_string();
    (app, vid, sid)
}

#[tokio::test]
async fn video_endpoints() {
    let (app, vid, _) = setup().await;
    let (status, bytes, _) = call(&app, "GET", &format!("/videos/{vid}/summary"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&bytes)["keyframe_count"], 3);
    let (status, bytes, ctype) = call(&app, "GET", &format!("/videos/{vid}/keyframes/1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/x-portable-graymap"));
    assert_eq!(bytes, support::video(3).images[1]);
    assert_eq!(call(&app, "GET", &format!("/videos/{vid}/keyframes/3"), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/videos/abc/summary", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn mismatched_video_is_unprocessable() {
    let app = router(Arc::new(Service::new(Arc::new(MemoryStore::new()))));
    let v = support::video(3);
    let body = json!({ "manifest": v.manifest, "outline": support::video(2).outline, "keyframes": [] });
    assert_eq!(call(&app, "POST", "/videos", Some(body)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn session_flow_and_status_codes() {
    let (app, _, sid) = setup().await;
    let base = format!("/sessions/{sid}");
    let (status, bytes, _) = call(&app, "GET", &base, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&bytes)["stage"], "selection");

    let sel = |k: usize, d: &str, v: u64| json!({ "keyframe": k, "decision": d, "expected_version": v });
    let (status, bytes, _) = call(&app, "POST", &format!("{base}/selection"), Some(sel(0, "accepted", 1))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&bytes)["version"], 2);
    let (status, bytes, _) = call(&app, "POST", &format!("{base}/selection"), Some(sel(1, "rejected", 1))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&bytes)["error"], "version_conflict");
    let (status, _, _) = call(&app, "POST", &format!("{base}/selection"), Some(sel(7, "rejected", 2))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    call(&app, "POST", &format!("{base}/selection"), Some(sel(1, "rejected", 2))).await;

    let outline = json!({ "op": "move_node", "args": { "node": "n3", "to": 0 }, "expected_version": 3 });
    let (status, bytes, _) = call(&app, "POST", &format!("{base}/outline"), Some(outline.clone())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&bytes)["error"], "wrong_stage");
    let (status, _, _) = call(&app, "POST", &format!("{base}/stage"), Some(json!({ "stage": "organization", "expected_version": 3 }))).await;
    assert_eq!(status, StatusCode::OK);
    let outline = json!({ "op": "move_node", "args": { "node": "n3", "to": 0 }, "expected_version": 4 });
    let (status, bytes, _) = call(&app, "POST", &format!("{base}/outline"), Some(outline)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&bytes)["outline"][0]["id"], "n3");
    let add = json!({ "op": "add_node", "args": { "position": 0, "keyframe": 1 }, "expected_version": 5 });
    assert_eq!(call(&app, "POST", &format!("{base}/outline"), Some(add)).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    call(&app, "POST", &format!("{base}/stage"), Some(json!({ "stage": "integration", "expected_version": 5 }))).await;
    let block = json!({ "node": "n1", "text": "summary", "expected_version": 6 });
    let (status, bytes, _) = call(&app, "POST", &format!("{base}/summary-block"), Some(block)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&bytes)["summary_blocks"]["n1"], "summary");
    let block = json!({ "node": "n9", "text": "summary", "expected_version": 7 });
    assert_eq!(call(&app, "POST", &format!("{base}/summary-block"), Some(block)).await.0, StatusCode::NOT_FOUND);

    let (status, bytes, _) = call(&app, "POST", &format!("{base}/events"), Some(json!({ "kind": "clip_reviewed", "payload": { "keyframe": 2 } }))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(json_of(&bytes)["seq"], 7);

    let (status, bytes, _) = call(&app, "GET", &format!("{base}/events"), None).await;
    assert_eq!(status, StatusCode::OK);
    let list = json_of(&bytes);
    assert_eq!(list.as_array().unwrap().len(), 7);
    let (_, csv, ctype) = call(&app, "GET", &format!("{base}/events?format=csv"), None).await;
    assert!(ctype.unwrap().starts_with("text/csv"));
    let parsed = parse_events_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(parsed).unwrap(), list);
    let (_, jsonl, _) = call(&app, "GET", &format!("{base}/events?format=jsonl"), None).await;
    assert_eq!(std::str::from_utf8(&jsonl).unwrap().lines().count(), 7);
    assert_eq!(call(&app, "GET", "/sessions/beef/events", None).await.0, StatusCode::NOT_FOUND);
}
