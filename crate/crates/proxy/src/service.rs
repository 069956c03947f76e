//! Request handling shared by the HTTP layer and the replay harness.
//!
//! Every query ticks the cache clock. A miss goes upstream through a
//! per-key coalescing table, so concurrent identical misses share one call,
//! and the result is inserted by whichever caller completes the fetch.
//! Supported queries also enqueue a prefetch task; a bounded pool of
//! workers turns each task into KNN suggestions and fetches the ones not yet
//! cached. Prefetch fetches only take an upstream permit when one is free
//! beyond the reserve, so queued client requests always go first.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::Duration;

use bytes::Bytes;
use futures::future::{BoxFuture, FutureExt, Shared};
use serde::Serialize;
use sparqlcache_core::cache::{CacheError, SharedCache};
use sparqlcache_core::distance::GedCalculator;
use sparqlcache_core::features::{FeatureSpace, TemplateSet};
use sparqlcache_core::suggest::{SuggestError, SuggestionModel};
use sparqlcache_core::{parse, CacheEntry, CachePolicyConfig, CanonicalKey, Origin, ParsedQuery, QueryGraph};
use tokio::sync::{mpsc, Notify, OwnedSemaphorePermit, Semaphore};

use crate::client::ExecuteError;
use crate::upstream::{Upstream, UpstreamResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub cache: CachePolicyConfig,
    pub suggestion_enabled: bool,
    pub k_neighbors: usize,
    pub prefetch_concurrency: usize,
    pub prefetch_queue_depth: usize,
    /// Upstream calls allowed in flight at once, shared by both paths.
    pub upstream_connections: usize,
    /// Sleep at the start of every prefetch task; a fault-injection knob.
    pub prefetch_stall: Duration,
}

impl ServiceConfig {
    pub fn new(cache: CachePolicyConfig) -> Self {
        Self {
            cache,
            suggestion_enabled: true,
            k_neighbors: 10,
            prefetch_concurrency: 2,
            prefetch_queue_depth: 128,
            upstream_connections: 8,
            prefetch_stall: Duration::ZERO,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k_neighbors == 0 {
            return Err("k_neighbors must be at least 1".into());
        }
        if self.prefetch_concurrency == 0 {
            return Err("prefetch_concurrency must be at least 1".into());
        }
        if self.prefetch_queue_depth == 0 {
            return Err("prefetch_queue_depth must be at least 1".into());
        }
        if self.upstream_connections == 0 {
            return Err("upstream_connections must be at least 1".into());
        }
        self.cache.validate().map_err(|e| e.to_string())
    }
}

/// A trained model together with the template set its vectors live in.
#[derive(Debug)]
pub struct SuggestionEngine {
    model: SuggestionModel<f64>,
    templates: TemplateSet,
    calc: GedCalculator<f64>,
}

impl SuggestionEngine {
    pub fn new(model: SuggestionModel<f64>, templates: TemplateSet) -> Result<Self, SuggestError> {
        if model.version() != templates.version() {
            return Err(SuggestError::VersionMismatch {
                expected: templates.version().to_string(),
                found: model.version().to_string(),
            });
        }
        if model.dimension() != templates.dimension() {
            return Err(SuggestError::DimensionMismatch {
                expected: templates.dimension(),
                actual: model.dimension(),
            });
        }
        Ok(Self {
            model,
            templates,
            calc: GedCalculator::default(),
        })
    }

    pub fn model(&self) -> &SuggestionModel<f64> {
        &self.model
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Canonical texts of the `k` nearest training queries.
    pub fn suggest(&self, query: &ParsedQuery, k: usize) -> Vec<String> {
        let vector = self.templates.featurize(&QueryGraph::from_query(query), &self.calc);
        self.model
            .suggest(vector.values(), k)
            .expect("dimension checked at construction")
            .into_iter()
            .map(str::to_string)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CacheStatus {
    Hit,
    Miss,
    /// Served from upstream but not cacheable (over the size limit).
    Bypass,
}

impl CacheStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheStatus::Hit => "HIT",
            CacheStatus::Miss => "MISS",
            CacheStatus::Bypass => "BYPASS",
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub key: CanonicalKey,
    pub body: Bytes,
    pub media_type: String,
    pub status: CacheStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServiceError {
    #[error("request carries no query")]
    MissingQuery,
    #[error(transparent)]
    Upstream(#[from] ExecuteError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelInfo {
    pub loaded: bool,
    pub points: usize,
    pub dimension: usize,
    pub version: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceStats {
    pub entry_count: usize,
    pub cached_bytes: usize,
    pub ledger_bytes: usize,
    pub ledger_records: usize,
    pub hit_count: u64,
    pub miss_count: u64,
    pub hit_rate: f64,
    pub eviction_count: u64,
    pub prefetch_insert_count: u64,
    pub upstream_calls: u64,
    pub upstream_errors: u64,
    pub bypass_count: u64,
    pub suggestions_issued: u64,
    pub prefetches_executed: u64,
    pub prefetches_skipped_cached: u64,
    pub prefetches_failed: u64,
    pub prefetches_dropped: u64,
    pub model: ModelInfo,
}

#[derive(Debug, Default)]
struct Counters {
    upstream_calls: AtomicU64,
    upstream_errors: AtomicU64,
    bypass: AtomicU64,
    suggestions_issued: AtomicU64,
    prefetches_executed: AtomicU64,
    prefetches_skipped_cached: AtomicU64,
    prefetches_failed: AtomicU64,
    prefetches_dropped: AtomicU64,
}

impl Counters {
    fn reset(&self) {
        for c in [
            &self.upstream_calls,
            &self.upstream_errors,
            &self.bypass,
            &self.suggestions_issued,
            &self.prefetches_executed,
            &self.prefetches_skipped_cached,
            &self.prefetches_failed,
            &self.prefetches_dropped,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

#[derive(Debug)]
struct Fetched {
    response: UpstreamResponse,
    cached: bool,
}

type SharedFetch = Shared<BoxFuture<'static, Result<Arc<Fetched>, ExecuteError>>>;

struct PrefetchTask {
    key: CanonicalKey,
    query: ParsedQuery,
}

pub struct QueryService {
    config: ServiceConfig,
    cache: SharedCache<f64>,
    upstream: Arc<dyn Upstream>,
    engine: RwLock<Option<Arc<SuggestionEngine>>>,
    pool: Arc<Semaphore>,
    reserve: usize,
    in_flight: Mutex<HashMap<String, SharedFetch>>,
    queue: mpsc::Sender<PrefetchTask>,
    pending: AtomicUsize,
    idle: Notify,
    counters: Counters,
}

impl std::fmt::Debug for QueryService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueryService").field("config", &self.config).finish_non_exhaustive()
    }
}

impl QueryService {
    /// Builds the service and spawns its prefetch workers on the current
    /// tokio runtime. Workers exit when the service is dropped.
    pub fn start(
        config: ServiceConfig,
        upstream: Arc<dyn Upstream>,
        engine: Option<SuggestionEngine>,
    ) -> Result<Arc<Self>, String> {
        config.validate()?;
        let cache = SharedCache::new(config.cache.clone()).map_err(|e| e.to_string())?;
        let (tx, rx) = mpsc::channel(config.prefetch_queue_depth);
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        let service = Arc::new(Self {
            pool: Arc::new(Semaphore::new(config.upstream_connections)),
            reserve: usize::from(config.upstream_connections > 1),
            cache,
            upstream,
            engine: RwLock::new(engine.map(Arc::new)),
            in_flight: Mutex::new(HashMap::new()),
            queue: tx,
            pending: AtomicUsize::new(0),
            idle: Notify::new(),
            counters: Counters::default(),
            config,
        });
        for _ in 0..service.config.prefetch_concurrency {
            tokio::spawn(prefetch_worker(Arc::downgrade(&service), rx.clone()));
        }
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn cache(&self) -> &SharedCache<f64> {
        &self.cache
    }

    /// Replaces the suggestion engine; in-flight tasks keep the old one.
    pub fn set_engine(&self, engine: Option<SuggestionEngine>) {
        *self.engine.write().unwrap_or_else(|e| e.into_inner()) = engine.map(Arc::new);
    }

    pub fn engine(&self) -> Option<Arc<SuggestionEngine>> {
        self.engine.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub async fn handle(self: &Arc<Self>, raw: &str) -> Result<QueryOutcome, ServiceError> {
        if raw.trim().is_empty() {
            return Err(ServiceError::MissingQuery);
        }
        let parsed = parse(raw).ok();
        let (key, text) = match &parsed {
            Some(q) => {
                let key = q.canonicalize();
                let text = key.as_str().to_string();
                (key, text)
            }
            None => (CanonicalKey::identity(raw), raw.to_string()),
        };

        let outcome = match self.cache.request(&key) {
            Some(entry) => QueryOutcome {
                key: key.clone(),
                body: Bytes::copy_from_slice(&entry.result),
                media_type: entry.media_type,
                status: CacheStatus::Hit,
            },
            None => {
                let fetched = self.fetch(key.clone(), text, Origin::Direct).await;
                let fetched = fetched.inspect_err(|_| bump(&self.counters.upstream_errors))?;
                let status = if fetched.cached {
                    CacheStatus::Miss
                } else {
                    bump(&self.counters.bypass);
                    CacheStatus::Bypass
                };
                QueryOutcome {
                    key: key.clone(),
                    body: fetched.response.body.clone(),
                    media_type: fetched.response.media_type.clone(),
                    status,
                }
            }
        };
        if let Some(query) = parsed {
            self.enqueue(PrefetchTask { key, query });
        }
        Ok(outcome)
    }

    /// Resolves once every queued and running prefetch task has finished.
    pub async fn drain(&self) {
        loop {
            let notified = self.idle.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.pending.load(Ordering::SeqCst) == 0 {
                return;
            }
            notified.await;
        }
    }

    pub fn flush(&self, keep_counters: bool) {
        self.cache.flush(keep_counters);
        if !keep_counters {
            self.counters.reset();
        }
    }

    pub fn stats(&self) -> ServiceStats {
        let c = self.cache.stats();
        let load = |a: &AtomicU64| a.load(Ordering::Relaxed);
        let model = match self.engine() {
            Some(e) => ModelInfo {
                loaded: true,
                points: e.model.len(),
                dimension: e.model.dimension(),
                version: Some(e.model.version().to_string()),
            },
            None => ModelInfo::default(),
        };
        ServiceStats {
            entry_count: c.entry_count,
            cached_bytes: c.cached_bytes,
            ledger_bytes: c.ledger_bytes,
            ledger_records: c.ledger_records,
            hit_count: c.hits,
            miss_count: c.misses,
            hit_rate: c.hit_rate,
            eviction_count: c.evictions,
            prefetch_insert_count: c.prefetch_inserts,
            upstream_calls: load(&self.counters.upstream_calls),
            upstream_errors: load(&self.counters.upstream_errors),
            bypass_count: load(&self.counters.bypass),
            suggestions_issued: load(&self.counters.suggestions_issued),
            prefetches_executed: load(&self.counters.prefetches_executed),
            prefetches_skipped_cached: load(&self.counters.prefetches_skipped_cached),
            prefetches_failed: load(&self.counters.prefetches_failed),
            prefetches_dropped: load(&self.counters.prefetches_dropped),
            model,
        }
    }

    fn enqueue(&self, task: PrefetchTask) {
        if !self.config.suggestion_enabled || self.engine().is_none() {
            return;
        }
        self.pending.fetch_add(1, Ordering::SeqCst);
        if self.queue.try_send(task).is_err() {
            bump(&self.counters.prefetches_dropped);
            self.finish_task();
        }
    }

    fn finish_task(&self) {
        if self.pending.fetch_sub(1, Ordering::SeqCst) == 1 {
            self.idle.notify_waiters();
        }
    }

    /// Joins the in-flight fetch for `key` or starts one. The fetch inserts
    /// a successful result into the cache before leaving the table.
    async fn fetch(self: &Arc<Self>, key: CanonicalKey, text: String, origin: Origin) -> Result<Arc<Fetched>, ExecuteError> {
        let shared = {
            let mut table = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(existing) = table.get(key.as_str()) {
                existing.clone()
            } else {
                let this = Arc::clone(self);
                let k = key.clone();
                let fut: BoxFuture<'static, _> = async move {
                    let result = this.fetch_uncoalesced(&k, &text, origin).await;
                    this.in_flight.lock().unwrap_or_else(|e| e.into_inner()).remove(k.as_str());
                    result
                }
                .boxed();
                let shared = fut.shared();
                table.insert(key.as_str().to_string(), shared.clone());
                shared
            }
        };
        shared.await
    }

    async fn fetch_uncoalesced(&self, key: &CanonicalKey, text: &str, origin: Origin) -> Result<Arc<Fetched>, ExecuteError> {
        let permit = match origin {
            Origin::Direct => self.pool.clone().acquire_owned().await.expect("pool never closes"),
            Origin::Prefetch => self.low_priority_permit().await,
        };
        bump(&self.counters.upstream_calls);
        let response = self.upstream.execute(text).await;
        drop(permit);
        let response = response?;
        let entry = CacheEntry::new(key.clone(), response.body.to_vec(), response.media_type.clone(), origin);
        let cached = match self.cache.insert(entry) {
            Ok(evicted) => {
                if !evicted.is_empty() {
                    tracing::debug!(count = evicted.len(), "evicted after insert");
                }
                true
            }
            Err(CacheError::OversizedEntry { size, max }) => {
                tracing::debug!(key = key.as_str(), size, max, "result too large to cache");
                false
            }
            Err(e) => {
                tracing::warn!(error = %e, "cache insert failed");
                false
            }
        };
        Ok(Arc::new(Fetched { response, cached }))
    }

    async fn low_priority_permit(&self) -> OwnedSemaphorePermit {
        loop {
            if self.pool.available_permits() > self.reserve {
                if let Ok(p) = self.pool.clone().try_acquire_owned() {
                    return p;
                }
            }
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    }

    async fn run_prefetch(self: &Arc<Self>, task: PrefetchTask) {
        if !self.config.prefetch_stall.is_zero() {
            tokio::time::sleep(self.config.prefetch_stall).await;
        }
        let Some(engine) = self.engine() else { return };
        let suggestions = engine.suggest(&task.query, self.config.k_neighbors);
        for text in suggestions {
            bump(&self.counters.suggestions_issued);
            if text == task.key.as_str() {
                continue;
            }
            let key = CanonicalKey(text.clone());
            if self.cache.contains(&key) {
                bump(&self.counters.prefetches_skipped_cached);
                continue;
            }
            match self.fetch(key, text, Origin::Prefetch).await {
                Ok(_) => bump(&self.counters.prefetches_executed),
                Err(e) => {
                    bump(&self.counters.prefetches_failed);
                    tracing::warn!(error = %e, "prefetch failed");
                }
            }
        }
    }
}

async fn prefetch_worker(service: Weak<QueryService>, rx: Arc<tokio::sync::Mutex<mpsc::Receiver<PrefetchTask>>>) {
    loop {
        let task = { rx.lock().await.recv().await };
        let Some(task) = task else { return };
        let Some(service) = service.upgrade() else { return };
        service.run_prefetch(task).await;
        service.finish_task();
    }
}
