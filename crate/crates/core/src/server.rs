//! Read-only HTTP API over a loaded knowledge base.
//!
//! ```text
//! GET /api/triplets?<query>   Page<TripletResult>
//! GET /api/posts?<query>      Page<PostResult>
//! GET /api/vocab              facet option lists
//! GET /api/health             {"status":"ok","instances":N}
//! ```
//!
//! Client errors answer 400 with `{"error":{"code":..,"message":..}}`.
//! Anything outside `/api` is served from the optional static directory.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::kb::{KnowledgeBase, TripletGender};
use crate::search::{query_posts, query_triplets, PostDetailsMap, Query, SearchError};
use crate::vocab::AttributeType;

pub struct AppState {
    pub kb: KnowledgeBase,
    pub details: PostDetailsMap,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: &'a SearchError,
}

fn client_error(e: SearchError) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: &e })).into_response()
}

fn parse(raw: Option<String>) -> Result<Query, SearchError> {
    Query::from_query_string(raw.as_deref().unwrap_or(""))
}

async fn triplets(State(state): State<Arc<AppState>>, RawQuery(raw): RawQuery) -> Response {
    match parse(raw).and_then(|q| query_triplets(&state.kb, &q)) {
        Ok(page) => Json(page).into_response(),
        Err(e) => client_error(e),
    }
}

async fn posts(State(state): State<Arc<AppState>>, RawQuery(raw): RawQuery) -> Response {
    match parse(raw).and_then(|q| query_posts(&state.kb, Some(&state.details), &q)) {
        Ok(page) => Json(page).into_response(),
        Err(e) => client_error(e),
    }
}

#[derive(Debug, Serialize)]
pub struct VocabResponse<'a> {
    pub version: &'a str,
    pub occasions: &'a [String],
    pub genders: Vec<&'static str>,
    pub categories: &'a [String],
    pub attributes: &'a [AttributeType],
    pub hashtags: Vec<&'a String>,
    pub locations: Vec<&'a String>,
}

pub fn vocab_response(kb: &KnowledgeBase) -> VocabResponse<'_> {
    let v = kb.vocabulary();
    VocabResponse {
        version: v.version(),
        occasions: v.occasions(),
        genders: TripletGender::ALL.iter().map(|g| g.as_str()).collect(),
        categories: v.categories(),
        attributes: v.attributes(),
        hashtags: kb.indexes().hashtag.keys().collect(),
        locations: kb.indexes().location.keys().collect(),
    }
}

async fn vocab(State(state): State<Arc<AppState>>) -> Response {
    Json(vocab_response(&state.kb)).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({"status": "ok", "instances": state.kb.instance_count()})).into_response()
}

async fn api_not_found() -> Response {
    (
        StatusCode::NOT_FOUND,
        Json(json!({"error": {"code": "not_found", "message": "no such endpoint"}})),
    )
        .into_response()
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/triplets", get(triplets))
        .route("/posts", get(posts))
        .route("/vocab", get(vocab))
        .route("/health", get(health))
        .fallback(api_not_found)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => {
            app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => app,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(
    state: Arc<AppState>,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
