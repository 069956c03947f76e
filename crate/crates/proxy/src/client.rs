//! SPARQL Protocol client for the upstream endpoint.

use std::time::{Duration, Instant};

use bytes::{Bytes, BytesMut};
use futures::future::BoxFuture;
use reqwest::header::{ACCEPT, CONTENT_TYPE};
use reqwest::Url;

use crate::upstream::{Upstream, UpstreamResponse};

pub const DEFAULT_ACCEPT: &str = "application/sparql-results+json";
pub const DEFAULT_MAX_RESULT_BYTES: usize = 4 * 1024 * 1024;

/// Requests whose full GET URL would exceed this many characters are sent
/// as form-encoded POST instead.
pub const MAX_GET_URL_CHARS: usize = 2000;

const SNIPPET_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecuteError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("upstream did not answer within {0:?}")]
    Timeout(Duration),
    #[error("upstream returned HTTP {status}: {snippet}")]
    Upstream { status: u16, snippet: String },
    #[error("upstream result exceeds {limit} bytes")]
    ResultTooLarge { limit: usize },
    #[error("cannot reach upstream: {0}")]
    ConnectionFailed(String),
}

impl ExecuteError {
    /// Only transport failures are worth retrying; SELECT is side-effect free.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExecuteError::Timeout(_) | ExecuteError::ConnectionFailed(_))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid upstream URL `{url}`: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("upstream timeout must be positive")]
    ZeroTimeout,
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub accept: String,
    pub max_result_bytes: usize,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            accept: DEFAULT_ACCEPT.to_string(),
            max_result_bytes: DEFAULT_MAX_RESULT_BYTES,
        }
    }

    pub fn validate(&self) -> Result<Url, ConfigError> {
        if self.timeout.is_zero() {
            return Err(ConfigError::ZeroTimeout);
        }
        let url = Url::parse(&self.url).map_err(|e| ConfigError::InvalidUrl {
            url: self.url.clone(),
            reason: e.to_string(),
        })?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(ConfigError::InvalidUrl {
                url: self.url.clone(),
                reason: "scheme must be http or https".into(),
            });
        }
        Ok(url)
    }
}

/// Sends each query text unchanged; the body comes back verbatim.
#[derive(Debug, Clone)]
pub struct EndpointClient {
    config: EndpointConfig,
    url: Url,
    http: reqwest::Client,
}

impl EndpointClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ConfigError> {
        let url = config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ConfigError::Client(e.to_string()))?;
        Ok(Self { config, url, http })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub async fn execute(&self, query: &str) -> Result<UpstreamResponse, ExecuteError> {
        if query.trim().is_empty() {
            return Err(ExecuteError::EmptyQuery);
        }
        let mut attempt = 0;
        loop {
            match self.execute_once(query).await {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    tracing::warn!(error = %e, attempt, "retrying upstream request");
                    tokio::time::sleep(Duration::from_millis(50 << attempt.min(6))).await;
                }
                other => return other,
            }
        }
    }

    async fn execute_once(&self, query: &str) -> Result<UpstreamResponse, ExecuteError> {
        let start = Instant::now();
        let mut get_url = self.url.clone();
        get_url.query_pairs_mut().append_pair("query", query);
        let request = if get_url.as_str().len() <= MAX_GET_URL_CHARS {
            self.http.get(get_url)
        } else {
            let body = form_urlencoded::Serializer::new(String::new())
                .append_pair("query", query)
                .finish();
            self.http
                .post(self.url.clone())
                .header(CONTENT_TYPE, "application/x-www-form-urlencoded")
                .body(body)
        };
        let mut response = request
            .header(ACCEPT, &self.config.accept)
            .send()
            .await
            .map_err(|e| self.transport_error(e))?;
        let status = response.status();
        let media_type = response
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or(&self.config.accept)
            .to_string();
        let limit = self.config.max_result_bytes;
        if response.content_length().is_some_and(|n| n as usize > limit) && status.is_success() {
            return Err(ExecuteError::ResultTooLarge { limit });
        }
        let mut body = BytesMut::new();
        while let Some(chunk) = response.chunk().await.map_err(|e| self.transport_error(e))? {
            if body.len() + chunk.len() > limit && status.is_success() {
                return Err(ExecuteError::ResultTooLarge { limit });
            }
            body.extend_from_slice(&chunk);
        }
        let body: Bytes = body.freeze();
        if !status.is_success() {
            let text = String::from_utf8_lossy(&body);
            return Err(ExecuteError::Upstream {
                status: status.as_u16(),
                snippet: text.chars().take(SNIPPET_CHARS).collect(),
            });
        }
        Ok(UpstreamResponse {
            body,
            media_type,
            status: status.as_u16(),
            elapsed: start.elapsed(),
        })
    }

    fn transport_error(&self, e: reqwest::Error) -> ExecuteError {
        if e.is_timeout() {
            ExecuteError::Timeout(self.config.timeout)
        } else {
            ExecuteError::ConnectionFailed(e.to_string())
        }
    }
}

impl Upstream for EndpointClient {
    fn execute<'a>(&'a self, query: &'a str) -> BoxFuture<'a, Result<UpstreamResponse, ExecuteError>> {
        Box::pin(EndpointClient::execute(self, query))
    }
}
