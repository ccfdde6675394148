mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use fashionkb::search::{post_details, query_posts, query_triplets, Query};
use fashionkb::server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

fn state() -> (Arc<AppState>, common::Extraction) {
    let ex = common::extraction(120, 12);
    let state = Arc::new(AppState {
        kb: ex.kb.clone(),
        details: post_details(&ex.posts),
    });
    (state, ex)
}

async fn get(app: axum::Router, uri: &str) -> (StatusCode, String) {
    let resp = app
        .oneshot(Request::builder().uri(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

#[tokio::test]
async fn triplets_endpoint_matches_library() {
    let (state, ex) = state();
    let app = router(state, None);
    let (status, body) = get(app, "/api/triplets?occasion=prom&occasion=wedding&limit=5").await;
    assert_eq!(status, StatusCode::OK);
    let q = Query::from_query_string("occasion=prom&occasion=wedding&limit=5").unwrap();
    let expect = serde_json::to_value(query_triplets(&ex.kb, &q).unwrap()).unwrap();
    let got: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(got, expect);
    for key in ["results", "total", "offset", "limit"] {
        assert!(got.get(key).is_some(), "missing {key}");
    }
}

#[tokio::test]
async fn posts_endpoint_includes_captions() {
    let (state, ex) = state();
    let details = state.details.clone();
    let (status, body) = get(router(state, None), "/api/posts?min_likes=50").await;
    assert_eq!(status, StatusCode::OK);
    let q = Query::from_query_string("min_likes=50").unwrap();
    let expect = serde_json::to_value(query_posts(&ex.kb, Some(&details), &q).unwrap()).unwrap();
    let got: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(got, expect);
    let first = &got["results"][0];
    assert!(first["caption"].is_string());
    assert!(first["post_id"].is_string());
}

#[tokio::test]
async fn vocab_lists_facet_options() {
    let (state, ex) = state();
    let (status, body) = get(router(state, None), "/api/vocab").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(
        v["occasions"].as_array().unwrap().len(),
        ex.kb.vocabulary().occasions().len()
    );
    assert_eq!(
        v["genders"],
        serde_json::json!(["female", "male", "unknown"])
    );
    assert_eq!(
        v["attributes"].as_array().unwrap().len(),
        ex.kb.vocabulary().attributes().len()
    );
    assert_eq!(
        v["hashtags"].as_array().unwrap().len(),
        ex.kb.indexes().hashtag.len()
    );
}

#[tokio::test]
async fn bad_queries_answer_400_with_codes() {
    let (state, _) = state();
    for (uri, code) in [
        ("/api/triplets?occasion=gala", "unknown_facet_value"),
        ("/api/posts?time_from=5&time_to=1", "malformed_range"),
        ("/api/posts?limit=500", "invalid_parameter"),
        ("/api/triplets?colour=red", "unknown_parameter"),
        ("/api/triplets?offset=-1", "invalid_parameter"),
    ] {
        let (status, body) = get(router(state.clone(), None), uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        let v: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["error"]["code"], code, "{uri}");
    }
    let (status, body) = get(router(state.clone(), None), "/api/triplets?occasion=gala").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert!(v["error"]["valid_values"]
        .as_array()
        .unwrap()
        .iter()
        .any(|x| x == "prom"));
    let (status, _) = get(router(state, None), "/api/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_files_served_under_root() {
    let (state, _) = state();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>explorer</html>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let app = router(state, Some(dir.path().to_path_buf()));
    let (status, body) = get(app.clone(), "/").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.contains("explorer"));
    let (status, body) = get(app.clone(), "/app.js").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "console.log(1)");
    let (status, body) = get(app, "/api/health").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.contains("\"status\":\"ok\""));
}

#[tokio::test]
async fn answers_over_a_real_socket() {
    let (state, ex) = state();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move {
        axum::serve(listener, router(state, None)).await.unwrap();
    });
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /api/health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut buf = String::new();
    stream.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    assert!(buf.contains(&format!("\"instances\":{}", ex.kb.instance_count())));
    server.abort();
}
