//! Log replay through the cache pipeline with per-run metrics.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::Serialize;
use sparqlcache_core::{parse, CachePolicyConfig, CanonicalKey};
use sparqlcache_proxy::{
    CacheStatus, ExecuteError, QueryService, ServiceConfig, ServiceError, SuggestionEngine, Upstream,
};

use crate::log::QueryLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    NoCache,
    IdentityCache,
    PrefetchCache,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::NoCache => "no-cache",
            Mode::IdentityCache => "identity-cache",
            Mode::PrefetchCache => "prefetch-cache",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-cache" => Ok(Mode::NoCache),
            "identity-cache" => Ok(Mode::IdentityCache),
            "prefetch-cache" => Ok(Mode::PrefetchCache),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayConfig {
    pub mode: Mode,
    #[serde(serialize_with = "ser_cache")]
    pub cache: CachePolicyConfig,
    pub k_neighbors: usize,
    pub prefetch_concurrency: usize,
    pub prefetch_queue_depth: usize,
    pub runs: usize,
    /// Requests in flight at once; 1 replays strictly in log order.
    pub concurrency: usize,
    /// Wait for prefetch work after every query instead of only between runs.
    pub drain_each_query: bool,
    pub prefetch_stall_ms: u64,
}

fn ser_cache<S: serde::Serializer>(c: &CachePolicyConfig, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("CachePolicyConfig", 5)?;
    st.serialize_field("policy", &c.policy.to_string())?;
    st.serialize_field("alpha", &c.alpha)?;
    st.serialize_field("capacity", &c.capacity)?;
    st.serialize_field("ledgerCapacity", &c.ledger_capacity)?;
    st.serialize_field("maxEntryBytes", &c.max_entry_bytes)?;
    st.end()
}

impl ReplayConfig {
    pub fn new(mode: Mode, cache: CachePolicyConfig) -> Self {
        Self {
            mode,
            cache,
            k_neighbors: 10,
            prefetch_concurrency: 1,
            prefetch_queue_depth: 128,
            runs: 2,
            concurrency: 1,
            drain_each_query: true,
            prefetch_stall_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TraceStatus {
    Hit,
    Miss,
    Bypass,
    Error,
}

/// One replayed request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub run: usize,
    pub seq: usize,
    pub status: TraceStatus,
    pub latency_us: u64,
    pub key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub run: usize,
    pub queries: usize,
    pub hits: u64,
    pub misses: u64,
    pub errors: u64,
    pub hit_rate: f64,
    pub avg_query_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub upstream_calls: u64,
    pub prefetches: u64,
    pub evictions: u64,
    pub cached_bytes: usize,
    pub ledger_bytes: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub mode: Mode,
    /// Metrics of the last run.
    pub measured: RunMetrics,
    pub runs: Vec<RunMetrics>,
    pub config: ReplayConfig,
    pub log_entries: usize,
    pub model_points: Option<usize>,
}

impl ReplayReport {
    pub fn hit_rate(&self) -> f64 {
        self.measured.hit_rate
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub report: ReplayReport,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("invalid replay configuration: {0}")]
    Config(String),
    #[error("upstream unreachable after {completed} of {total} requests: {reason}")]
    Aborted {
        completed: usize,
        total: usize,
        reason: String,
        partial: Box<ReplayReport>,
    },
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn run_metrics(run: usize, rows: &[TraceRow]) -> RunMetrics {
    let hits = rows.iter().filter(|r| r.status == TraceStatus::Hit).count() as u64;
    let errors = rows.iter().filter(|r| r.status == TraceStatus::Error).count() as u64;
    let misses = rows.len() as u64 - hits;
    let mut lat: Vec<f64> = rows.iter().map(|r| r.latency_us as f64 / 1000.0).collect();
    lat.sort_by(f64::total_cmp);
    let avg = if lat.is_empty() {
        0.0
    } else {
        lat.iter().sum::<f64>() / lat.len() as f64
    };
    RunMetrics {
        run,
        queries: rows.len(),
        hits,
        misses,
        errors,
        hit_rate: if rows.is_empty() { 0.0 } else { hits as f64 / rows.len() as f64 },
        avg_query_ms: avg,
        p50_ms: percentile(&lat, 50.0),
        p95_ms: percentile(&lat, 95.0),
        p99_ms: percentile(&lat, 99.0),
        ..RunMetrics::default()
    }
}

/// Hit rate recomputed from a trace: hits over all requests of `run`.
pub fn hit_rate_from_trace(trace: &[TraceRow], run: usize) -> f64 {
    let rows: Vec<&TraceRow> = trace.iter().filter(|r| r.run == run).collect();
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.status == TraceStatus::Hit).count() as f64 / rows.len() as f64
}

fn key_of(query: &str) -> String {
    match parse(query) {
        Ok(q) => q.canonicalize().0,
        Err(_) => CanonicalKey::identity(query).0,
    }
}

enum Pipeline {
    Direct(Arc<dyn Upstream>),
    Cached(Arc<QueryService>),
}

impl Pipeline {
    async fn one(&self, query: &str) -> (TraceStatus, Option<ExecuteError>) {
        match self {
            Pipeline::Direct(up) => match up.execute(query).await {
                Ok(_) => (TraceStatus::Miss, None),
                Err(e) => (TraceStatus::Error, Some(e)),
            },
            Pipeline::Cached(svc) => match svc.handle(query).await {
                Ok(out) => (
                    match out.status {
                        CacheStatus::Hit => TraceStatus::Hit,
                        CacheStatus::Miss => TraceStatus::Miss,
                        CacheStatus::Bypass => TraceStatus::Bypass,
                    },
                    None,
                ),
                Err(ServiceError::Upstream(e)) => (TraceStatus::Error, Some(e)),
                Err(ServiceError::MissingQuery) => (TraceStatus::Error, Some(ExecuteError::EmptyQuery)),
            },
        }
    }
}

/// Replays `log` `config.runs` times without flushing between runs.
/// `engine` is required for prefetch-cache and ignored otherwise.
pub async fn replay(
    log: &QueryLog,
    config: &ReplayConfig,
    upstream: Arc<dyn Upstream>,
    engine: Option<SuggestionEngine>,
) -> Result<ReplayOutcome, ReplayError> {
    if config.runs == 0 || config.concurrency == 0 {
        return Err(ReplayError::Config("runs and concurrency must be at least 1".into()));
    }
    let model_points = engine.as_ref().map(|e| e.model().len());
    let pipeline = match config.mode {
        Mode::NoCache => Pipeline::Direct(upstream.clone()),
        mode => {
            if mode == Mode::PrefetchCache && engine.is_none() {
                return Err(ReplayError::Config("prefetch-cache mode needs a suggestion model".into()));
            }
            let service = ServiceConfig {
                suggestion_enabled: mode == Mode::PrefetchCache,
                k_neighbors: config.k_neighbors,
                prefetch_concurrency: config.prefetch_concurrency,
                prefetch_queue_depth: config.prefetch_queue_depth,
                upstream_connections: config.concurrency.max(1) + config.prefetch_concurrency,
                prefetch_stall: Duration::from_millis(config.prefetch_stall_ms),
                ..ServiceConfig::new(config.cache.clone())
            };
            let engine = if mode == Mode::PrefetchCache { engine } else { None };
            Pipeline::Cached(QueryService::start(service, upstream.clone(), engine).map_err(ReplayError::Config)?)
        }
    };
    let keys: Vec<String> = log.queries().map(key_of).collect();
    let total = log.len() * config.runs;
    let mut trace = Vec::with_capacity(total);
    let mut runs = Vec::with_capacity(config.runs);

    for run in 1..=config.runs {
        let before = match &pipeline {
            Pipeline::Cached(svc) => Some(svc.stats()),
            Pipeline::Direct(_) => None,
        };
        let started = Instant::now();
        let pipeline_ref = &pipeline;
        let drain_each = config.drain_each_query && config.concurrency == 1;
        let results: Vec<(usize, TraceStatus, Option<ExecuteError>, Duration)> = stream::iter(log.queries().enumerate())
            .map(|(seq, q)| async move {
                let t = Instant::now();
                let (status, err) = pipeline_ref.one(q).await;
                let elapsed = t.elapsed();
                if drain_each {
                    if let Pipeline::Cached(svc) = pipeline_ref {
                        svc.drain().await;
                    }
                }
                (seq, status, err, elapsed)
            })
            .buffered(config.concurrency)
            .collect()
            .await;
        if let Pipeline::Cached(svc) = &pipeline {
            svc.drain().await;
        }
        let wall = started.elapsed();

        let mut rows = Vec::with_capacity(results.len());
        let mut abort = None;
        for (seq, status, err, elapsed) in results {
            if let Some(ExecuteError::ConnectionFailed(reason)) = &err {
                abort.get_or_insert_with(|| (seq, reason.clone()));
            }
            if let Some(e) = &err {
                tracing::debug!(seq, error = %e, "replayed query failed");
            }
            rows.push(TraceRow {
                run,
                seq,
                status,
                latency_us: elapsed.as_micros() as u64,
                key: keys[seq].clone(),
            });
        }
        let mut m = run_metrics(run, &rows);
        m.wall_ms = wall.as_secs_f64() * 1000.0;
        match (&pipeline, before) {
            (Pipeline::Cached(svc), Some(b)) => {
                let a = svc.stats();
                m.upstream_calls = a.upstream_calls - b.upstream_calls;
                m.prefetches = a.prefetches_executed - b.prefetches_executed;
                m.evictions = a.eviction_count - b.eviction_count;
                m.cached_bytes = a.cached_bytes;
                m.ledger_bytes = a.ledger_bytes;
            }
            _ => m.upstream_calls = rows.len() as u64,
        }
        trace.extend(rows);
        runs.push(m);
        if let Some((seq, reason)) = abort {
            let measured = runs.last().cloned().unwrap_or_default();
            return Err(ReplayError::Aborted {
                completed: (run - 1) * log.len() + seq,
                total,
                reason,
                partial: Box::new(ReplayReport {
                    mode: config.mode,
                    measured,
                    runs,
                    config: config.clone(),
                    log_entries: log.len(),
                    model_points,
                }),
            });
        }
    }
    let measured = runs.last().cloned().unwrap_or_default();
    Ok(ReplayOutcome {
        report: ReplayReport {
            mode: config.mode,
            measured,
            runs,
            config: config.clone(),
            log_entries: log.len(),
            model_points,
        },
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[7.0], 1.0), 7.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn modes_parse_and_print() {
        for m in [Mode::NoCache, Mode::IdentityCache, Mode::PrefetchCache] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("lru".parse::<Mode>().is_err());
    }
}
