//! Caching SPARQL proxy with similarity-driven prefetching.

pub mod client;
pub mod config;
pub mod http;
pub mod service;
pub mod upstream;

use std::sync::Arc;

use sparqlcache_core::features::{FeatureSpace, TemplateSet};
use sparqlcache_core::suggest::SuggestionModel;

pub use client::{ConfigError, EndpointClient, EndpointConfig, ExecuteError};
pub use config::{ProxyConfig, ProxyConfigError};
pub use http::router;
pub use service::{CacheStatus, QueryOutcome, QueryService, ServiceConfig, ServiceError, ServiceStats, SuggestionEngine};
pub use upstream::{stub_router, StubUpstream, Upstream, UpstreamResponse};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ProxyConfigError),
    #[error(transparent)]
    Client(#[from] ConfigError),
    #[error("cannot load suggestion model: {0}")]
    Model(String),
    #[error("{0}")]
    Service(String),
    #[error("server I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Loads the model and template set named by the configuration, if any.
pub fn load_engine(config: &ProxyConfig) -> Result<Option<SuggestionEngine>, ServeError> {
    let Some(model_path) = &config.suggestion.model_path else {
        return Ok(None);
    };
    let templates = match &config.suggestion.templates_path {
        Some(p) => TemplateSet::load(p).map_err(|e| ServeError::Model(e.to_string()))?,
        None => TemplateSet::bundled(),
    };
    let model = SuggestionModel::load(model_path, Some(templates.version()))
        .map_err(|e| ServeError::Model(format!("{}: {e}", model_path.display())))?;
    SuggestionEngine::new(model, templates)
        .map(Some)
        .map_err(|e| ServeError::Model(e.to_string()))
}

/// Runs the proxy until the process receives Ctrl-C.
pub async fn serve(config: ProxyConfig) -> Result<(), ServeError> {
    config.validate()?;
    let client = EndpointClient::new(config.endpoint())?;
    let engine = load_engine(&config)?;
    let service = QueryService::start(config.service(), Arc::new(client), engine).map_err(ServeError::Service)?;
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    tracing::info!(listen = %listener.local_addr()?, upstream = %config.upstream.url, "proxy listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
