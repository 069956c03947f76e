//! The `sparqlcache` command line.

use std::error::Error;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sparqlcache_core::distance::{approx_ged, exact_ged, EditCostScheme};
use sparqlcache_core::features::{FeatureSpace, TemplateSet};
use sparqlcache_core::suggest::SuggestionModel;
use sparqlcache_core::{parse, CachePolicyConfig, Policy, QueryGraph};
use sparqlcache_proxy::{EndpointClient, EndpointConfig, ProxyConfig, StubUpstream, SuggestionEngine, Upstream};

use crate::experiment::{self, ModelSource, SweepParameter, CLUSTER_SWEEP, K_SWEEP};
use crate::log::{QueryLog, SplitRule};
use crate::replay::{self, Mode, ReplayConfig, ReplayError};
use crate::workload::{self, WorkloadSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

type BoxError = Box<dyn Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "sparqlcache", version, about = "Prefetching SPARQL cache: training, workloads, replay and proxy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a log chronologically and train a suggestion model on the training part.
    Train(TrainArgs),
    /// Write a seeded synthetic query log.
    Generate(GenerateArgs),
    /// Replay a log through no cache, identity caching, or prefetch caching.
    Replay(ReplayArgs),
    /// Replay once per value of k or of the cluster count.
    Sweep(SweepArgs),
    /// Compare template-based and cluster-based feature modelling.
    CompareFeatures(CompareArgs),
    /// Print the approximate (and, for small graphs, exact) edit distance of two queries.
    Ged(GedArgs),
    /// Run the caching proxy.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Query log to split and train on.
    #[arg(long)]
    log: PathBuf,
    /// Template file; the bundled set when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Where to write the model.
    #[arg(long)]
    model: PathBuf,
    /// Training split output [default: <log>.train].
    #[arg(long)]
    train_out: Option<PathBuf>,
    /// Test split output [default: <log>.test].
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8, conflicts_with_all = ["train_count", "test_count"])]
    train_fraction: f64,
    #[arg(long, requires = "test_count")]
    train_count: Option<usize>,
    #[arg(long, requires = "train_count")]
    test_count: Option<usize>,
    /// Summary as JSON, or CSV when the name ends in `.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Output log.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    zipf: f64,
    /// Values per slot.
    #[arg(long, default_value_t = 8)]
    pool: usize,
    /// Fraction of exact repeats of recent queries.
    #[arg(long, default_value_t = 0.3)]
    repeat: f64,
    /// Consecutive fresh queries drawn from one template.
    #[arg(long, default_value_t = 1)]
    session: usize,
    /// Vary only this many leading slots per template (default: all).
    #[arg(long)]
    varied_slots: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct CacheArgs {
    /// Replacement policy: mses or lru.
    #[arg(long, default_value = "mses")]
    policy: Policy,
    #[arg(long, default_value_t = sparqlcache_core::cache::DEFAULT_ALPHA)]
    alpha: f64,
    /// Cached entries (H).
    #[arg(long, default_value_t = 1000)]
    capacity: usize,
    /// Estimation records kept [default: 4 x capacity].
    #[arg(long)]
    ledger_capacity: Option<usize>,
    #[arg(long, default_value_t = sparqlcache_core::cache::DEFAULT_MAX_ENTRY_BYTES)]
    max_entry_bytes: usize,
}

impl CacheArgs {
    fn config(&self) -> CachePolicyConfig {
        let mut c = CachePolicyConfig::new(self.capacity)
            .with_policy(self.policy)
            .with_alpha(self.alpha)
            .with_max_entry_bytes(self.max_entry_bytes);
        if let Some(r) = self.ledger_capacity {
            c = c.with_ledger_capacity(r);
        }
        c
    }
}

#[derive(Debug, Args, Clone)]
struct UpstreamArgs {
    /// Real SPARQL endpoint; the built-in stub is used when omitted.
    #[arg(long)]
    upstream: Option<String>,
    /// Per-query latency of the built-in stub.
    #[arg(long, default_value_t = 50)]
    stub_latency_ms: u64,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

impl UpstreamArgs {
    fn build(&self) -> Result<Arc<dyn Upstream>, BoxError> {
        Ok(match &self.upstream {
            Some(url) => Arc::new(EndpointClient::new(EndpointConfig {
                timeout: Duration::from_millis(self.timeout_ms),
                ..EndpointConfig::new(url)
            })?),
            None => Arc::new(StubUpstream::new(Duration::from_millis(self.stub_latency_ms))),
        })
    }
}

#[derive(Debug, Args, Clone)]
struct ReplayTuning {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    prefetch_concurrency: usize,
    #[arg(long, default_value_t = 128)]
    prefetch_queue_depth: usize,
    #[arg(long, default_value_t = 2)]
    runs: usize,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    /// Only wait for prefetch work between runs, not after every query.
    #[arg(long)]
    no_drain_each: bool,
}

impl ReplayTuning {
    fn config(&self, mode: Mode, cache: &CacheArgs) -> ReplayConfig {
        ReplayConfig {
            k_neighbors: self.k,
            prefetch_concurrency: self.prefetch_concurrency,
            prefetch_queue_depth: self.prefetch_queue_depth,
            runs: self.runs,
            concurrency: self.concurrency,
            drain_each_query: !self.no_drain_each,
            ..ReplayConfig::new(mode, cache.config())
        }
    }
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Test log to replay.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value = "prefetch-cache")]
    mode: Mode,
    /// Suggestion model; required for prefetch-cache.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[command(flatten)]
    cache: CacheArgs,
    #[command(flatten)]
    tuning: ReplayTuning,
    #[command(flatten)]
    upstream: UpstreamArgs,
    /// Per-request access trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    log: PathBuf,
    /// `k` or `clusters`.
    #[arg(long)]
    param: SweepParameter,
    /// Comma-separated values [default: 2,5,10,20,50,100 for k; 5,10,15,20,30 for clusters].
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    /// Model for a k sweep.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Training log for a cluster sweep.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    cache: CacheArgs,
    #[command(flatten)]
    tuning: ReplayTuning,
    #[command(flatten)]
    upstream: UpstreamArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    train: PathBuf,
    /// When given, both models are also replayed on this log.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[command(flatten)]
    cache: CacheArgs,
    #[command(flatten)]
    tuning: ReplayTuning,
    #[command(flatten)]
    upstream: UpstreamArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GedArgs {
    /// First query, or `@path` to read it from a file.
    a: String,
    /// Second query, or `@path`.
    b: String,
    /// Largest graph (in nodes) for which the exact distance is computed.
    #[arg(long, default_value_t = 10)]
    exact_limit: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// TOML configuration file; flags override it, environment overrides sit in between.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    upstream: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    accept: Option<String>,
    #[arg(long)]
    max_result_bytes: Option<usize>,
    /// Upstream connections shared by requests and prefetching.
    #[arg(long)]
    connections: Option<usize>,
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    ledger_capacity: Option<usize>,
    #[arg(long)]
    max_entry_bytes: Option<usize>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    prefetch_concurrency: Option<usize>,
    #[arg(long)]
    prefetch_queue_depth: Option<usize>,
    /// Enable or disable suggestion and prefetching.
    #[arg(long)]
    suggestion: Option<bool>,
}

impl ServeArgs {
    fn resolve(&self, env: impl Fn(&str) -> Option<String>) -> Result<ProxyConfig, BoxError> {
        let mut c = match &self.config {
            Some(p) => ProxyConfig::load(p)?,
            None => ProxyConfig::default(),
        };
        c.apply_overrides(env);
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        set(&mut c.listen, &self.listen);
        set(&mut c.upstream.url, &self.upstream);
        set(&mut c.upstream.timeout_ms, &self.timeout_ms);
        set(&mut c.upstream.max_retries, &self.max_retries);
        set(&mut c.upstream.accept, &self.accept);
        set(&mut c.upstream.max_result_bytes, &self.max_result_bytes);
        set(&mut c.upstream.connections, &self.connections);
        set(&mut c.cache.policy, &self.policy);
        set(&mut c.cache.alpha, &self.alpha);
        set(&mut c.cache.capacity, &self.capacity);
        set(&mut c.cache.max_entry_bytes, &self.max_entry_bytes);
        if self.ledger_capacity.is_some() {
            c.cache.ledger_capacity = self.ledger_capacity;
        }
        if self.model.is_some() {
            c.suggestion.model_path = self.model.clone();
        }
        if self.templates.is_some() {
            c.suggestion.templates_path = self.templates.clone();
        }
        set(&mut c.suggestion.k_neighbors, &self.k);
        set(&mut c.suggestion.prefetch_concurrency, &self.prefetch_concurrency);
        set(&mut c.suggestion.prefetch_queue_depth, &self.prefetch_queue_depth);
        set(&mut c.suggestion.enabled, &self.suggestion);
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, BoxError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn execute(command: Command) -> Result<(), BoxError> {
    match command {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Replay(a) => runtime()?.block_on(replay_cmd(a)),
        Command::Sweep(a) => runtime()?.block_on(sweep_cmd(a)),
        Command::CompareFeatures(a) => runtime()?.block_on(compare_cmd(a)),
        Command::Ged(a) => ged(a),
        Command::Serve(a) => {
            let config = a.resolve(|k| std::env::var(k).ok())?;
            let _ = tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .try_init();
            runtime()?.block_on(sparqlcache_proxy::serve(config))?;
            Ok(())
        }
    }
}

fn load_templates(path: &Option<PathBuf>) -> Result<TemplateSet, BoxError> {
    Ok(match path {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::bundled(),
    })
}

fn load_engine(model: &Path, templates: &Option<PathBuf>) -> Result<SuggestionEngine, BoxError> {
    let templates = load_templates(templates)?;
    let model = SuggestionModel::load(model, Some(templates.version()))?;
    Ok(SuggestionEngine::new(model, templates)?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// JSON, or CSV of `rows` when the file name ends in `.csv`.
fn write_out<R: Serialize, J: Serialize>(path: &Path, rows: &[R], json: &J) -> Result<(), BoxError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    } else {
        std::fs::write(path, serde_json::to_string_pretty(json)? + "\n")?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    log_entries: usize,
    train_entries: usize,
    test_entries: usize,
    accepted: usize,
    duplicates: usize,
    unparseable: usize,
    dimension: usize,
    feature_space: String,
    ged_calls: u64,
    train_ms: f64,
}

fn train(a: TrainArgs) -> Result<(), BoxError> {
    let log = QueryLog::load(&a.log)?;
    let rule = match (a.train_count, a.test_count) {
        (Some(train), Some(test)) => SplitRule::Counts { train, test },
        _ => SplitRule::Fraction(a.train_fraction),
    };
    let (train_log, test_log) = log.split(rule)?;
    let train_out = a.train_out.clone().unwrap_or_else(|| with_suffix(&a.log, ".train"));
    let test_out = a.test_out.clone().unwrap_or_else(|| with_suffix(&a.log, ".test"));
    train_log.save(&train_out)?;
    test_log.save(&test_out)?;
    let templates = load_templates(&a.templates)?;
    let trained = experiment::train_template(&train_log, &templates)?;
    trained.model.save(&a.model)?;
    let s = TrainSummary {
        log_entries: log.len(),
        train_entries: train_log.len(),
        test_entries: test_log.len(),
        accepted: trained.report.accepted,
        duplicates: trained.report.duplicates,
        unparseable: trained.report.unparseable,
        dimension: templates.dimension(),
        feature_space: templates.version().to_string(),
        ged_calls: trained.ged_calls,
        train_ms: trained.wall.as_secs_f64() * 1000.0,
    };
    println!(
        "split      {} entries -> {} train ({}), {} test ({})",
        s.log_entries,
        s.train_entries,
        train_out.display(),
        s.test_entries,
        test_out.display()
    );
    println!(
        "training   {} distinct, {} duplicates, {} unparseable",
        s.accepted, s.duplicates, s.unparseable
    );
    println!("ged calls  {}", s.ged_calls);
    println!("wall time  {:.1} ms", s.train_ms);
    println!("model      {} ({}-d, {})", a.model.display(), s.dimension, s.feature_space);
    if let Some(out) = &a.out {
        write_out(out, std::slice::from_ref(&s), &s)?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<(), BoxError> {
    let templates = load_templates(&a.templates)?;
    let spec = WorkloadSpec {
        n_queries: a.n,
        zipf_exponent: a.zipf,
        value_pool_size: a.pool,
        repeat_fraction: a.repeat,
        session_length: a.session,
        varied_slots: a.varied_slots,
        seed: a.seed,
    };
    let log = workload::generate(&spec, &templates)?;
    log.save(&a.log)?;
    let distinct = log.queries().collect::<std::collections::HashSet<_>>().len();
    println!("wrote {} queries ({} distinct) to {}", log.len(), distinct, a.log.display());
    if let Some(out) = &a.out {
        write_out(out, std::slice::from_ref(&spec), &spec)?;
    }
    Ok(())
}

fn print_runs(report: &replay::ReplayReport) {
    println!(
        "{:<4} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>11}",
        "run", "queries", "hits", "misses", "hit rate", "avg ms", "p50 ms", "p95 ms", "p99 ms", "upstream", "prefetches"
    );
    for r in &report.runs {
        println!(
            "{:<4} {:>7} {:>7} {:>7} {:>9.4} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>10} {:>11}",
            r.run,
            r.queries,
            r.hits,
            r.misses,
            r.hit_rate,
            r.avg_query_ms,
            r.p50_ms,
            r.p95_ms,
            r.p99_ms,
            r.upstream_calls,
            r.prefetches
        );
    }
    let m = &report.measured;
    println!(
        "{} measured (run {}): hit rate {:.4}, avg {:.3} ms, cached {} B, ledger {} B, evictions {}",
        report.mode, m.run, m.hit_rate, m.avg_query_ms, m.cached_bytes, m.ledger_bytes, m.evictions
    );
}

async fn replay_cmd(a: ReplayArgs) -> Result<(), BoxError> {
    let log = QueryLog::load(&a.log)?;
    let engine = match (&a.model, a.mode) {
        (Some(m), Mode::PrefetchCache) => Some(load_engine(m, &a.templates)?),
        (None, Mode::PrefetchCache) => return Err("prefetch-cache mode needs --model".into()),
        _ => None,
    };
    let config = a.tuning.config(a.mode, &a.cache);
    let outcome = match replay::replay(&log, &config, a.upstream.build()?, engine).await {
        Ok(o) => o,
        Err(ReplayError::Aborted {
            completed,
            total,
            reason,
            partial,
        }) => {
            print_runs(&partial);
            return Err(format!("aborted after {completed} of {total} requests: {reason}").into());
        }
        Err(e) => return Err(e.into()),
    };
    print_runs(&outcome.report);
    if let Some(path) = &a.trace {
        let mut w = csv::Writer::from_path(path)?;
        for row in &outcome.trace {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    if let Some(out) = &a.out {
        write_out(out, &outcome.report.runs, &outcome.report)?;
    }
    Ok(())
}

async fn sweep_cmd(a: SweepArgs) -> Result<(), BoxError> {
    let test = QueryLog::load(&a.log)?;
    let values = if a.values.is_empty() {
        match a.param {
            SweepParameter::K => K_SWEEP.to_vec(),
            SweepParameter::Clusters => CLUSTER_SWEEP.to_vec(),
        }
    } else {
        a.values.clone()
    };
    let base = a.tuning.config(Mode::PrefetchCache, &a.cache);
    let upstream = a.upstream.build()?;
    let rows = match a.param {
        SweepParameter::K => {
            let model = a.model.as_ref().ok_or("a k sweep needs --model")?;
            let engine = load_engine(model, &a.templates)?;
            let trained = experiment::TrainedModel {
                model: engine.model().clone(),
                templates: engine.templates().clone(),
                report: Default::default(),
                ged_calls: 0,
                wall: Duration::ZERO,
            };
            experiment::sweep(&test, a.param, &values, &base, ModelSource::Trained(&trained), upstream).await?
        }
        SweepParameter::Clusters => {
            let train = QueryLog::load(a.train.as_ref().ok_or("a cluster sweep needs --train")?)?;
            let source = ModelSource::Clusters {
                train: &train,
                seed: a.seed,
            };
            experiment::sweep(&test, a.param, &values, &base, source, upstream).await?
        }
    };
    println!("{:>8} {:>9} {:>9}", a.param_name(), "hit rate", "avg ms");
    for r in &rows {
        println!("{:>8} {:>9.4} {:>9.3}", r.value, r.hit_rate, r.avg_query_ms);
    }
    if let Some(out) = &a.out {
        write_out(out, &rows, &rows)?;
    }
    Ok(())
}

impl SweepArgs {
    fn param_name(&self) -> &'static str {
        match self.param {
            SweepParameter::K => "k",
            SweepParameter::Clusters => "clusters",
        }
    }
}

async fn compare_cmd(a: CompareArgs) -> Result<(), BoxError> {
    let train = QueryLog::load(&a.train)?;
    let test = a.test.as_ref().map(QueryLog::load).transpose()?;
    let templates = load_templates(&a.templates)?;
    let base = a.tuning.config(Mode::PrefetchCache, &a.cache);
    let rows = experiment::compare_features(
        &train,
        test.as_ref(),
        &templates,
        a.clusters,
        a.seed,
        &base,
        a.upstream.build()?,
    )
    .await?;
    println!(
        "{:<9} {:>8} {:>9} {:>12} {:>12} {:>9}",
        "approach", "queries", "dimension", "ged calls", "train ms", "hit rate"
    );
    for r in &rows {
        let hr = r.hit_rate.map_or_else(|| "-".to_string(), |h| format!("{h:.4}"));
        println!(
            "{:<9} {:>8} {:>9} {:>12} {:>12.1} {:>9}",
            r.approach, r.training_queries, r.dimension, r.ged_calls, r.train_ms, hr
        );
    }
    if let Some(out) = &a.out {
        write_out(out, &rows, &rows)?;
    }
    Ok(())
}

fn read_query(arg: &str) -> Result<String, BoxError> {
    match arg.strip_prefix('@') {
        Some(path) => Ok(std::fs::read_to_string(path)?),
        None => Ok(arg.to_string()),
    }
}

fn ged(a: GedArgs) -> Result<(), BoxError> {
    let ga = QueryGraph::from_query(&parse(&read_query(&a.a)?)?);
    let gb = QueryGraph::from_query(&parse(&read_query(&a.b)?)?);
    let costs = EditCostScheme::<f64>::default();
    println!("nodes    {} / {}", ga.node_count(), gb.node_count());
    println!("approx   {}", approx_ged(&ga, &gb, &costs));
    if ga.node_count() <= a.exact_limit && gb.node_count() <= a.exact_limit {
        println!("exact    {}", exact_ged(&ga, &gb, &costs, a.exact_limit)?);
    } else {
        println!("exact    skipped (more than {} nodes)", a.exact_limit);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serve_args(extra: &[&str]) -> ServeArgs {
        let mut argv = vec!["sparqlcache", "serve"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Serve(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn serve_flags_override_file_and_environment() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("proxy.toml");
        std::fs::write(&file, "listen = \"127.0.0.1:7000\"\n[cache]\ncapacity = 5\n").unwrap();
        let path = file.to_str().unwrap();
        let env = |k: &str| (k == "SPARQLCACHE_UPSTREAM").then(|| "http://env.example/sparql".to_string());

        let c = serve_args(&["--config", path]).resolve(env).unwrap();
        assert_eq!(c.listen, "127.0.0.1:7000");
        assert_eq!(c.cache.capacity, 5);
        assert_eq!(c.upstream.url, "http://env.example/sparql");

        let c = serve_args(&[
            "--config",
            path,
            "--upstream",
            "http://flag.example/sparql",
            "--capacity",
            "9",
            "--policy",
            "lru",
            "--k",
            "3",
            "--suggestion",
            "false",
        ])
        .resolve(env)
        .unwrap();
        assert_eq!(c.upstream.url, "http://flag.example/sparql");
        assert_eq!(c.cache.capacity, 9);
        assert_eq!(c.cache.policy, Policy::Lru);
        assert_eq!(c.suggestion.k_neighbors, 3);
        assert!(!c.suggestion.enabled);
        assert!(serve_args(&["--k", "0"]).resolve(|_| None).is_err());
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["sparqlcache", "replay"]), EXIT_USAGE);
        assert_eq!(run(["sparqlcache", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["sparqlcache", "--help"]), EXIT_OK);
        assert_eq!(run(["sparqlcache", "ged", "SELECT * WHERE { ?s ?p ?o }", "ASK {}"]), EXIT_RUNTIME);
        assert_eq!(
            run(["sparqlcache", "train", "--log", "/nonexistent/log", "--model", "/tmp/m"]),
            EXIT_RUNTIME
        );
    }
}
