//! The upstream abstraction and a deterministic stub endpoint.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Form, Router};
use bytes::Bytes;
use futures::future::BoxFuture;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::client::{ExecuteError, DEFAULT_ACCEPT};

#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamResponse {
    pub body: Bytes,
    pub media_type: String,
    pub status: u16,
    pub elapsed: Duration,
}

/// Anything that can answer a SPARQL query with result bytes.
pub trait Upstream: Send + Sync + 'static {
    fn execute<'a>(&'a self, query: &'a str) -> BoxFuture<'a, Result<UpstreamResponse, ExecuteError>>;
}

/// In-process endpoint: answers every query with a JSON result derived
/// from a hash of the query text after a fixed latency, and counts calls.
#[derive(Debug, Default)]
pub struct StubUpstream {
    latency: Duration,
    calls: AtomicU64,
    per_query: Mutex<HashMap<String, u64>>,
    failure: Mutex<Option<ExecuteError>>,
}

impl StubUpstream {
    pub fn new(latency: Duration) -> Self {
        Self {
            latency,
            ..Self::default()
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, query: &str) -> u64 {
        self.lock_counts().get(query).copied().unwrap_or(0)
    }

    pub fn reset_counts(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.lock_counts().clear();
    }

    /// Makes every following call fail with `error` until cleared with `None`.
    pub fn set_failure(&self, error: Option<ExecuteError>) {
        *self.failure.lock().unwrap_or_else(|e| e.into_inner()) = error;
    }

    /// The body returned for `query`: a SPARQL JSON result with one to four
    /// bindings whose values are taken from the SHA-256 of the text.
    pub fn body_for(query: &str) -> Bytes {
        let digest = hex::encode(Sha256::digest(query.as_bytes()));
        let rows = 1 + (digest.as_bytes()[0] % 4) as usize;
        let bindings: Vec<String> = (0..rows)
            .map(|i| {
                format!(
                    r#"{{"x":{{"type":"literal","value":"{}"}}}}"#,
                    &digest[i * 16..i * 16 + 16]
                )
            })
            .collect();
        Bytes::from(format!(
            r#"{{"head":{{"vars":["x"]}},"results":{{"bindings":[{}]}}}}"#,
            bindings.join(",")
        ))
    }

    fn lock_counts(&self) -> std::sync::MutexGuard<'_, HashMap<String, u64>> {
        self.per_query.lock().unwrap_or_else(|e| e.into_inner())
    }

    async fn answer(&self, query: &str) -> Result<UpstreamResponse, ExecuteError> {
        let start = Instant::now();
        self.calls.fetch_add(1, Ordering::SeqCst);
        *self.lock_counts().entry(query.to_string()).or_default() += 1;
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let failure = self.failure.lock().unwrap_or_else(|e| e.into_inner()).clone();
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(UpstreamResponse {
            body: Self::body_for(query),
            media_type: DEFAULT_ACCEPT.to_string(),
            status: 200,
            elapsed: start.elapsed(),
        })
    }
}

impl Upstream for StubUpstream {
    fn execute<'a>(&'a self, query: &'a str) -> BoxFuture<'a, Result<UpstreamResponse, ExecuteError>> {
        Box::pin(self.answer(query))
    }
}

#[derive(Debug, Deserialize)]
struct QueryParam {
    query: Option<String>,
}

async fn stub_get(State(stub): State<Arc<StubUpstream>>, Query(p): Query<QueryParam>) -> Response {
    stub_reply(&stub, p.query).await
}

async fn stub_post(State(stub): State<Arc<StubUpstream>>, Form(p): Form<QueryParam>) -> Response {
    stub_reply(&stub, p.query).await
}

async fn stub_reply(stub: &StubUpstream, query: Option<String>) -> Response {
    let Some(query) = query.filter(|q| !q.is_empty()) else {
        return (StatusCode::BAD_REQUEST, "missing query").into_response();
    };
    match stub.answer(&query).await {
        Ok(r) => ([(header::CONTENT_TYPE, r.media_type)], r.body).into_response(),
        Err(ExecuteError::Upstream { status, snippet }) => {
            (StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), snippet).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// HTTP face of a [`StubUpstream`]: `GET /sparql?query=` and form `POST /sparql`.
pub fn stub_router(stub: Arc<StubUpstream>) -> Router {
    Router::new()
        .route("/sparql", get(stub_get).post(stub_post))
        .with_state(stub)
}
