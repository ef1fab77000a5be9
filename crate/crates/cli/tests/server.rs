use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use saf_lab::pipeline::{read_session, write_session, SessionEntry};
use saf_lab_cli::server::{router, LabelSession, SessionView, StatusView, API_VERSION};
use serde_json::{json, Value};
use tower::ServiceExt;

fn entries(n: usize) -> Vec<SessionEntry> {
    (0..n)
        .map(|c| SessionEntry {
            cluster_id: c,
            frame_index: c * 3,
            instance_index: c % 2,
            label: None,
        })
        .collect()
}

fn session(dir: &std::path::Path, n: usize) -> Arc<LabelSession> {
    let path = dir.join("session.jsonl");
    let e = entries(n);
    write_session(&path, &e).unwrap();
    let overlays = (0..n).map(|i| vec![i as u8; 4]).collect();
    let classes = vec![
        "steel".into(),
        "graphite".into(),
        "blue".into(),
        "gold".into(),
    ];
    Arc::new(LabelSession::new(path, e, overlays, classes).unwrap())
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: Value) -> Request<Body> {
    Request::post("/api/session/labels")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn fresh_session_is_unlabelled() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(session(dir.path(), 8), None);
    let (st, body) = call(&app, get("/api/session")).await;
    assert_eq!(st, StatusCode::OK);
    let view: SessionView = serde_json::from_slice(&body).unwrap();
    assert_eq!(view.v, API_VERSION);
    assert_eq!(view.prototypes.len(), 8);
    assert!(view.prototypes.iter().all(|p| p.label.is_none()));
    assert_eq!(view.classes.len(), 4);
    // base64 of [3, 3, 3, 3]
    assert_eq!(view.prototypes[3].frame_png_base64, "AwMDAw==");

    let (st, body) = call(&app, get("/api/session/status")).await;
    assert_eq!(st, StatusCode::OK);
    let status: StatusView = serde_json::from_slice(&body).unwrap();
    assert_eq!((status.labelled, status.total), (0, 8));
}

#[tokio::test]
async fn posted_labels_are_persisted_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 8);
    let app = router(s.clone(), None);
    let labels = [2usize, 0, 3, 1, 1, 0, 2, 3];
    for (c, &l) in labels.iter().enumerate() {
        let (st, body) = call(&app, post(json!({ "cluster_id": c, "label": l }))).await;
        assert_eq!(st, StatusCode::OK);
        let status: StatusView = serde_json::from_slice(&body).unwrap();
        assert_eq!(status.labelled, c + 1);
    }
    let stored = read_session(s.path()).unwrap();
    assert_eq!(stored.len(), 8);
    for (e, &l) in stored.iter().zip(&labels) {
        assert_eq!(e.label, Some(l));
    }
    // relabelling overwrites without growing the file
    let (st, _) = call(&app, post(json!({ "cluster_id": 0, "label": 1 }))).await;
    assert_eq!(st, StatusCode::OK);
    let stored = read_session(s.path()).unwrap();
    assert_eq!(stored.len(), 8);
    assert_eq!(stored[0].label, Some(1));
    let (_, body) = call(&app, get("/api/session")).await;
    let view: SessionView = serde_json::from_slice(&body).unwrap();
    assert_eq!(view.prototypes[0].label, Some(1));
}

#[tokio::test]
async fn unknown_cluster_is_404_and_bad_label_is_422() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 8);
    let app = router(s.clone(), None);
    let (st, body) = call(&app, post(json!({ "cluster_id": 99, "label": 0 }))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let err: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(err["v"], 1);
    assert!(err["error"].as_str().unwrap().contains("99"));

    for bad in [
        json!({ "cluster_id": 1, "label": 4 }),
        json!({ "cluster_id": 1, "label": -1 }),
        json!({ "cluster_id": 1, "label": "blue" }),
    ] {
        let (st, _) = call(&app, post(bad)).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    }
    // nothing was written by rejected requests
    assert!(read_session(s.path())
        .unwrap()
        .iter()
        .all(|e| e.label.is_none()));
}

#[tokio::test]
async fn concurrent_posts_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 32);
    let app = router(s.clone(), None);
    let tasks: Vec<_> = (0..32)
        .map(|c| {
            let app = app.clone();
            tokio::spawn(async move {
                call(&app, post(json!({ "cluster_id": c, "label": c % 4 })))
                    .await
                    .0
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let stored = read_session(s.path()).unwrap();
    for (c, e) in stored.iter().enumerate() {
        assert_eq!(e.label, Some(c % 4));
    }
}

#[tokio::test]
async fn completion_is_signalled_after_last_label() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 2);
    let app = router(s.clone(), None);
    let waiter = tokio::spawn({
        let s = s.clone();
        async move { s.wait_complete().await }
    });
    call(&app, post(json!({ "cluster_id": 0, "label": 0 }))).await;
    tokio::task::yield_now().await;
    assert!(!waiter.is_finished());
    call(&app, post(json!({ "cluster_id": 1, "label": 2 }))).await;
    tokio::time::timeout(std::time::Duration::from_secs(5), waiter)
        .await
        .unwrap()
        .unwrap();
}

#[tokio::test]
async fn static_assets_are_served_at_root() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 1);
    let (st, body) = call(&router(s.clone(), None), get("/")).await;
    assert_eq!(st, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/session"));

    let assets = dir.path().join("dist");
    std::fs::create_dir(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<p>bundle</p>").unwrap();
    std::fs::write(assets.join("app.js"), "console.log(1)").unwrap();
    let app = router(s, Some(&assets));
    let (st, body) = call(&app, get("/")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body, b"<p>bundle</p>");
    let (st, body) = call(&app, get("/app.js")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body, b"console.log(1)");
    let (st, _) = call(&app, get("/missing.css")).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    // api routes still win over the asset directory
    let (st, _) = call(&app, get("/api/session/status")).await;
    assert_eq!(st, StatusCode::OK);
}

#[tokio::test]
async fn serves_over_tcp_until_complete() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), 1);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let server = tokio::spawn(saf_lab_cli::server::serve(s.clone(), addr, None));
    // raw HTTP/1.1 so the test needs no client crate
    let mut reply = String::new();
    for _ in 0..50 {
        if let Ok(mut stream) = tokio::net::TcpStream::connect(addr).await {
            use tokio::io::{AsyncReadExt, AsyncWriteExt};
            let body = r#"{"cluster_id":0,"label":3}"#;
            let req = format!(
                "POST /api/session/labels HTTP/1.1\r\nhost: x\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(req.as_bytes()).await.unwrap();
            stream.read_to_string(&mut reply).await.unwrap();
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    tokio::time::timeout(std::time::Duration::from_secs(5), server)
        .await
        .expect("server exits once labelled")
        .unwrap()
        .unwrap();
    assert_eq!(read_session(s.path()).unwrap()[0].label, Some(3));
}
