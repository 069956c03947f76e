//! HTTP front end: SPARQL Protocol on `/sparql` plus stats and admin routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::client::ExecuteError;
use crate::service::{QueryService, ServiceError};

pub const X_CACHE: &str = "x-cache";

#[derive(Debug, Deserialize)]
struct QueryParam {
    query: Option<String>,
}

#[derive(Debug, Deserialize)]
struct FlushParam {
    #[serde(default)]
    keep_counters: bool,
}

pub fn router(service: Arc<QueryService>) -> Router {
    Router::new()
        .route("/sparql", get(sparql_get).post(sparql_post))
        .route("/stats", get(stats))
        .route("/admin/flush", post(flush))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(service)
}

async fn sparql_get(State(service): State<Arc<QueryService>>, Query(p): Query<QueryParam>) -> Response {
    answer(&service, p.query).await
}

/// Accepts a form body with a `query` field or a raw `application/sparql-query` body.
async fn sparql_post(State(service): State<Arc<QueryService>>, headers: HeaderMap, body: Bytes) -> Response {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase();
    let query = match content_type.as_str() {
        "application/sparql-query" => match String::from_utf8(body.to_vec()) {
            Ok(q) => Some(q),
            Err(_) => return (StatusCode::BAD_REQUEST, "query body is not UTF-8").into_response(),
        },
        "application/x-www-form-urlencoded" => form_urlencoded::parse(&body)
            .find(|(k, _)| k == "query")
            .map(|(_, v)| v.into_owned()),
        _ => {
            return (
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "expected application/x-www-form-urlencoded or application/sparql-query",
            )
                .into_response()
        }
    };
    answer(&service, query).await
}

async fn answer(service: &Arc<QueryService>, query: Option<String>) -> Response {
    let query = query.unwrap_or_default();
    match service.handle(&query).await {
        Ok(out) => {
            let mut response = (StatusCode::OK, out.body).into_response();
            let h = response.headers_mut();
            if let Ok(v) = HeaderValue::from_str(&out.media_type) {
                h.insert(header::CONTENT_TYPE, v);
            }
            h.insert(X_CACHE, HeaderValue::from_static(out.status.as_str()));
            response
        }
        Err(e) => error_response(&e),
    }
}

fn error_response(e: &ServiceError) -> Response {
    let status = match e {
        ServiceError::MissingQuery | ServiceError::Upstream(ExecuteError::EmptyQuery) => StatusCode::BAD_REQUEST,
        ServiceError::Upstream(ExecuteError::Timeout(_)) => StatusCode::GATEWAY_TIMEOUT,
        ServiceError::Upstream(_) => StatusCode::BAD_GATEWAY,
    };
    (status, e.to_string()).into_response()
}

async fn stats(State(service): State<Arc<QueryService>>) -> Response {
    Json(service.stats()).into_response()
}

async fn flush(State(service): State<Arc<QueryService>>, Query(p): Query<FlushParam>) -> Response {
    service.flush(p.keep_counters);
    StatusCode::NO_CONTENT.into_response()
}
