use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use trajaudit::geometry::{BevPose, BoxDims};
use trajaudit::ingest::ObjectClass;
use trajaudit::miner::{mine, NearMissEvent, ScreeningConfig};
use trajaudit::qa::{OpenMode, QaStore};
use trajaudit::refine::Branch;
use trajaudit::safety::MetricSeries;
use trajaudit::tracker::{Provenance, Track, TrackPoint};
use trajaudit_service::{router, ApiError};

fn cv(id: u64, start: [f64; 2], v: [f64; 2], frames: std::ops::Range<u64>) -> Track {
    Track {
        track_id: id,
        class: ObjectClass::Car,
        points: frames
            .map(|k| {
                let t = k as f64 * 0.1;
                TrackPoint {
                    frame_id: k,
                    pose: BevPose::new(start[0] + v[0] * t, start[1] + v[1] * t, 0.0, 0.0),
                    dims: BoxDims::new(4.0, 2.0, 1.5).unwrap(),
                    score: 0.9,
                    provenance: Provenance::Raw,
                    prediction: None,
                }
            })
            .collect(),
    }
}

fn fixture() -> (Vec<Track>, Vec<NearMissEvent>) {
    let mut tracks = Vec::new();
    for k in 0..3u64 {
        let (f0, t0) = (100 * k, 10.0 * k as f64);
        tracks.push(cv(2 * k + 1, [-10.0 - 5.0 * t0, 0.0], [5.0, 0.0], f0..f0 + 40));
        tracks.push(cv(2 * k + 2, [10.0 + 5.0 * t0, 7.0], [-5.0, 0.0], f0..f0 + 40));
    }
    let events = mine(&tracks, &ScreeningConfig::default(), Some(Branch::B1)).unwrap().events;
    assert_eq!(events.len(), 3);
    (tracks, events)
}

struct Fixture {
    dir: tempfile::TempDir,
    events: Vec<NearMissEvent>,
}

fn exported() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (tracks, events) = fixture();
    let store = QaStore::open(dir.path(), OpenMode::ReadWrite).unwrap();
    store
        .export_queue(&events, &tracks, "000", 20, json!({"seed": 1}), "2024-01-01T00:00:00Z")
        .unwrap();
    Fixture { dir, events }
}

fn app(f: &Fixture, mode: OpenMode) -> axum::Router {
    router(Arc::new(QaStore::open(f.dir.path(), mode).unwrap()), None)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn assert_error(status: StatusCode, body: &Value, want: StatusCode, code: &str) {
    assert_eq!(status, want, "{body}");
    let err: ApiError = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(err.status, want.as_u16());
    assert_eq!(err.code, code);
    assert!(!err.message.is_empty());
}

#[tokio::test]
async fn rounds_and_queue() {
    let f = exported();
    let app = app(&f, OpenMode::ReadOnly);
    let (s, rounds) = call(&app, "GET", "/api/rounds", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rounds[0]["round_id"], "000");
    assert_eq!(rounds[0]["case_count"], 3);

    let (s, queue) = call(&app, "GET", "/api/rounds/000/queue", None).await;
    assert_eq!(s, StatusCode::OK);
    let queue = queue.as_array().unwrap();
    assert_eq!(queue.len(), 3);
    for item in queue {
        assert_eq!(item["status"], "pending");
        assert!(item.get("series").is_none());
        assert!(item.get("tracklets").is_none());
    }

    let (s, body) = call(&app, "GET", "/api/rounds/999/queue", None).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "round_not_found");
}

#[tokio::test]
async fn unknown_event_is_404() {
    let f = exported();
    let app = app(&f, OpenMode::ReadOnly);
    let (s, body) = call(&app, "GET", "/api/cases/deadbeef", None).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "event_not_found");
    let (s, body) = call(
        &app,
        "POST",
        "/api/cases/deadbeef/decision",
        Some(json!({"decision": "defer"})),
    )
    .await;
    // Read-only check comes first.
    assert_error(s, &body, StatusCode::CONFLICT, "store_read_only");
}

#[tokio::test]
async fn case_series_matches_batch_artifact() {
    let f = exported();
    let app = app(&f, OpenMode::ReadOnly);
    for ev in &f.events {
        let (s, body) = call(&app, "GET", &format!("/api/cases/{}", ev.event_id), None).await;
        assert_eq!(s, StatusCode::OK);
        let served: MetricSeries = serde_json::from_value(body["item"]["series"].clone()).unwrap();
        assert_eq!(served, ev.series);
        assert_eq!(
            serde_json::to_string(&served).unwrap(),
            serde_json::to_string(&ev.series).unwrap()
        );
        assert_eq!(body["item"]["summary"], serde_json::to_value(&ev.summary).unwrap());
        assert_eq!(body["item"]["tracklets"].as_array().unwrap().len(), 2);
        assert_eq!(body["status"], "pending");
        assert_eq!(body["history"], json!([]));
    }
}

#[tokio::test]
async fn keep_decision_reads_back() {
    let f = exported();
    let app = app(&f, OpenMode::ReadWrite);
    let id = &f.events[0].event_id;
    let (s, body) = call(
        &app,
        "POST",
        &format!("/api/cases/{id}/decision"),
        Some(json!({"decision": "keep", "failure_tag": "true_near_miss", "reviewer": "r1"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "kept");
    let record_id = body["record_id"].as_str().unwrap().to_string();

    let (_, summary) = call(&app, "GET", "/api/rounds/000/summary", None).await;
    assert_eq!(summary["records"], 1);
    assert_eq!(summary["by_decision"]["keep"], 1);
    assert_eq!(summary["by_tag"]["true_near_miss"], 1);

    let (_, case) = call(&app, "GET", &format!("/api/cases/{id}"), None).await;
    assert_eq!(case["status"], "kept");
    assert_eq!(case["history"][0]["record_id"], record_id);

    // A fresh store over the same directory sees the record.
    let reopened = QaStore::open(f.dir.path(), OpenMode::ReadOnly).unwrap();
    assert_eq!(reopened.records().len(), 1);
}

#[tokio::test]
async fn reject_without_tag_is_422() {
    let f = exported();
    let app = app(&f, OpenMode::ReadWrite);
    let id = &f.events[0].event_id;
    let (s, body) = call(
        &app,
        "POST",
        &format!("/api/cases/{id}/decision"),
        Some(json!({"decision": "reject"})),
    )
    .await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "missing_failure_tag");
    let (_, summary) = call(&app, "GET", "/api/rounds/000/summary", None).await;
    assert_eq!(summary["records"], 0);

    let (s, body) = call(
        &app,
        "POST",
        &format!("/api/cases/{id}/decision"),
        Some(json!({"decision": "maybe"})),
    )
    .await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_body");
}

#[tokio::test]
async fn read_only_post_is_409() {
    let f = exported();
    let app = app(&f, OpenMode::ReadOnly);
    let id = &f.events[0].event_id;
    let (s, body) = call(
        &app,
        "POST",
        &format!("/api/cases/{id}/decision"),
        Some(json!({"decision": "defer"})),
    )
    .await;
    assert_error(s, &body, StatusCode::CONFLICT, "store_read_only");
}

#[tokio::test]
async fn hotspot_excludes_rejected_by_default() {
    let f = exported();
    let app = app(&f, OpenMode::ReadWrite);
    let (s, grid) = call(&app, "GET", "/api/hotspot", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(grid["n"], 3);
    assert_eq!(grid["cell_size"], 1.0);

    let id = &f.events[1].event_id;
    let (s, _) = call(
        &app,
        "POST",
        &format!("/api/cases/{id}/decision"),
        Some(json!({"decision": "reject", "failure_tag": "tracking_break"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, grid) = call(&app, "GET", "/api/hotspot?cell_size=5", None).await;
    assert_eq!(grid["n"], 2);
    let total: u64 = grid["cells"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 2);
    let (_, grid) = call(&app, "GET", "/api/hotspot?include_rejected=true", None).await;
    assert_eq!(grid["n"], 3);

    let (s, body) = call(&app, "GET", "/api/hotspot?cell_size=0", None).await;
    assert_error(s, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_query");
}

#[tokio::test]
async fn gets_are_side_effect_free() {
    let f = exported();
    let app = app(&f, OpenMode::ReadWrite);
    let snapshot = |dir: &std::path::Path| {
        let mut files: Vec<(String, Vec<u8>)> = walk(dir);
        files.sort();
        files
    };
    let before = snapshot(f.dir.path());
    for uri in ["/api/rounds", "/api/rounds/000/queue", "/api/rounds/000/summary", "/api/hotspot"] {
        let (a, x) = call(&app, "GET", uri, None).await;
        let (b, y) = call(&app, "GET", uri, None).await;
        assert_eq!((a, &x), (b, &y));
    }
    assert_eq!(before, snapshot(f.dir.path()));
}

fn walk(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[tokio::test]
async fn concurrent_posts_create_one_record_each() {
    let f = exported();
    let app = app(&f, OpenMode::ReadWrite);
    let mut handles = Vec::new();
    for i in 0..24 {
        let app = app.clone();
        let id = f.events[i % 3].event_id.clone();
        handles.push(tokio::spawn(async move {
            call(
                &app,
                "POST",
                &format!("/api/cases/{id}/decision"),
                Some(json!({"decision": "defer", "notes": format!("n{i}")})),
            )
            .await
        }));
    }
    let mut ids = Vec::new();
    for h in handles {
        let (s, body) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        ids.push(body["record_id"].as_str().unwrap().to_string());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 24);
    let (_, summary) = call(&app, "GET", "/api/rounds/000/summary", None).await;
    assert_eq!(summary["records"], 24);
}

#[tokio::test]
async fn static_assets_are_served() {
    let f = exported();
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>ok</html>").unwrap();
    let store = Arc::new(QaStore::open(f.dir.path(), OpenMode::ReadOnly).unwrap());
    let app = router(store, Some(assets.path().to_path_buf()));
    let resp = app
        .oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<html>ok</html>");
}
