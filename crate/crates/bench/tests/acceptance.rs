//! Acceptance checks for the whole workspace. Prints one PASS/FAIL line per
//! criterion and exits non-zero when any criterion fails.

#[path = "../../core/tests/common/corpus.rs"]
mod corpus;

use std::collections::HashSet;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use sparqlcache_bench::experiment::{self, ModelSource, SweepParameter, TrainedModel, K_SWEEP};
use sparqlcache_bench::replay::percentile;
use sparqlcache_bench::{replay, Mode, QueryLog, ReplayConfig, SplitRule, WorkloadSpec};
use sparqlcache_core::cache::mses_update;
use sparqlcache_core::distance::{approx_ged, exact_ged};
use sparqlcache_core::features::FeatureVector;
use sparqlcache_core::{
    CacheEntry, CachePolicyConfig, CacheStore, CanonicalKey, EditCostScheme, EstimationRecord, NodeLabel, Origin,
    Policy, QueryGraph, SuggestionModel, TemplateSet,
};
use sparqlcache_proxy::{
    router, stub_router, EndpointClient, EndpointConfig, QueryService, ServiceConfig, StubUpstream, SuggestionEngine,
    Upstream,
};
use tokio::runtime::Runtime;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- GED bound

fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> QueryGraph {
    let mut labels = vec![NodeLabel::Root];
    let mut edges = vec![];
    let mut open = vec![0usize];
    let target = rng.random_range(1..=max_nodes);
    while labels.len() < target && !open.is_empty() {
        let parent = open[rng.random_range(0..open.len())];
        match rng.random_range(0..4) {
            0 if labels.len() + 4 <= max_nodes => {
                let conj = labels.len();
                labels.push(NodeLabel::Conj);
                edges.push((parent, conj));
                for (var, bound) in [
                    (NodeLabel::SVar, NodeLabel::SBound),
                    (NodeLabel::PVar, NodeLabel::PBound),
                    (NodeLabel::OVar, NodeLabel::OBound),
                ] {
                    edges.push((conj, labels.len()));
                    labels.push(if rng.random_bool(0.5) { var } else { bound });
                }
            }
            1 => {
                edges.push((parent, labels.len()));
                open.push(labels.len());
                labels.push(NodeLabel::Optional);
            }
            2 if labels.len() + 3 <= max_nodes => {
                let union = labels.len();
                labels.push(NodeLabel::Union);
                edges.push((parent, union));
                for _ in 0..2 {
                    edges.push((union, labels.len()));
                    open.push(labels.len());
                    labels.push(NodeLabel::Group);
                }
            }
            3 => {
                edges.push((parent, labels.len()));
                open.push(labels.len());
                labels.push(NodeLabel::Group);
            }
            _ => break,
        }
    }
    QueryGraph::from_parts(labels, edges)
}

fn ged_bound() -> Outcome {
    const PAIRS: usize = 500;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let costs = EditCostScheme::default();
    let (mut equal, mut below) = (0, 0);
    for _ in 0..PAIRS {
        let a = random_graph(&mut rng, 8);
        let b = random_graph(&mut rng, 8);
        assert!(a.node_count() <= 8 && b.node_count() <= 8);
        let approx = approx_ged(&a, &b, &costs);
        let exact = exact_ged(&a, &b, &costs, 8).map_err(|e| e.to_string())?;
        below += usize::from(approx < exact);
        equal += usize::from(approx == exact);
    }
    let ratio = equal as f64 / PAIRS as f64;
    let elapsed = start.elapsed();
    ensure(
        below == 0 && ratio >= 0.6 && elapsed < Duration::from_secs(60),
        format!(
            "{PAIRS} pairs: approx below exact on {below}, equal on {:.1}%, {:.1}s",
            ratio * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- KNN

fn knn_exact() -> Outcome {
    const N: usize = 1000;
    const DIM: usize = 18;
    const PROBES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    // Small integer coordinates produce many equal distances.
    for integer in [true, false] {
        let coord = |rng: &mut ChaCha8Rng| {
            if integer {
                rng.random_range(0..4) as f64
            } else {
                rng.random_range(-10.0..10.0)
            }
        };
        let mut labels: Vec<usize> = (0..N).collect();
        for i in (1..N).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let points: Vec<(Vec<f64>, String)> = labels
            .iter()
            .map(|l| ((0..DIM).map(|_| coord(&mut rng)).collect(), format!("q{l:04}")))
            .collect();
        let model = SuggestionModel::from_points(
            points.iter().map(|(v, t)| (FeatureVector::new(v.clone()), t.clone())).collect(),
            DIM,
            "random",
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..PROBES {
            let probe: Vec<f64> = (0..DIM).map(|_| coord(&mut rng)).collect();
            let mut scan: Vec<(f64, &str)> = points
                .iter()
                .map(|(v, t)| {
                    let d = v.iter().zip(&probe).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y));
                    (d, t.as_str())
                })
                .collect();
            scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
            for k in K_SWEEP {
                let got = model.suggest(&probe, k).map_err(|e| e.to_string())?;
                let want: Vec<&str> = scan.iter().take(k).map(|(_, t)| *t).collect();
                if got != want {
                    return Err(format!("k={k}: suggest returned {got:?}, linear scan {want:?}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} queries over 2 x {N} points in {DIM} dimensions match the linear scan"))
}

// ---------------------------------------------------------------- smoothing

fn mses_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let alpha = rng.random_range(0.05..0.95);
        let hits = rng.random_range(1..60);
        let mut times = Vec::with_capacity(hits);
        let mut t = rng.random_range(0..10u64);
        for _ in 0..hits {
            t += rng.random_range(1..30);
            times.push(t);
        }
        let mut record: Option<EstimationRecord> = None;
        for &t in &times {
            record = Some(mses_update(record.as_ref(), alpha, t).map_err(|e| e.to_string())?);
        }
        let last = *times.last().unwrap();
        let closed: f64 = alpha * times.iter().map(|&ti| (1.0 - alpha).powi((last - ti) as i32)).sum::<f64>();
        let got = record.unwrap().estimate;
        worst = worst.max((got - closed).abs() / closed);
    }
    ensure(worst <= 1e-9, format!("1000 histories, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- replacement

fn expected_victim(store: &CacheStore, key: &str, now: u64, alpha: f64) -> Result<String, String> {
    let incoming = match store.record(&CanonicalKey(key.to_string())) {
        Some(r) if r.last_hit >= now => r,
        prev => mses_update(prev.as_ref(), alpha, now).map_err(|e| e.to_string())?,
    };
    let mut candidates: Vec<(String, EstimationRecord)> = store
        .keys()
        .map(|k| (k.to_string(), store.record(&CanonicalKey(k.to_string())).expect("cached keys keep records")))
        .collect();
    candidates.push((key.to_string(), incoming));
    let value = |r: &EstimationRecord| r.estimate.ln() + (now - r.last_hit) as f64 * (1.0 - alpha).ln();
    candidates
        .into_iter()
        .min_by(|(ka, a), (kb, b)| {
            value(a)
                .total_cmp(&value(b))
                .then(a.last_hit.cmp(&b.last_hit))
                .then(ka.cmp(kb))
        })
        .map(|(k, _)| k)
        .ok_or_else(|| "no candidates".to_string())
}

fn replacement_oracle() -> Outcome {
    const EVENTS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut evictions = 0;
    for h in [1usize, 4, 16] {
        let alpha = rng.random_range(0.05..0.95);
        let mut store = CacheStore::new(CachePolicyConfig::new(h).with_alpha(alpha)).map_err(|e| e.to_string())?;
        let universe = 3 * h + 5;
        let popularity = Zipf::new(universe as f64, 0.8).map_err(|e| e.to_string())?;
        store.tick();
        for event in 0..EVENTS {
            let key = format!("k{:03}", popularity.sample(&mut rng) as usize);
            let ck = CanonicalKey(key.clone());
            let prefetch = rng.random_bool(0.25);
            let now = if prefetch { store.now() } else { store.tick() };
            if !prefetch && store.lookup(&ck, now).is_some() {
                continue;
            }
            if store.contains(&ck) {
                continue;
            }
            let expected = (store.len() == h).then(|| expected_victim(&store, &key, now, alpha)).transpose()?;
            let origin = if prefetch { Origin::Prefetch } else { Origin::Direct };
            let evicted = store
                .insert(CacheEntry::new(ck, vec![0u8; 16], "application/json", origin), now)
                .map_err(|e| e.to_string())?;
            if store.len() > h {
                return Err(format!("H={h}: occupancy {} after event {event}", store.len()));
            }
            let evicted: Vec<String> = evicted.into_iter().map(|k| k.0).collect();
            match expected {
                Some(want) if evicted != [want.clone()] => {
                    return Err(format!("H={h}, event {event}: evicted {evicted:?}, oracle {want}"))
                }
                None if !evicted.is_empty() => {
                    return Err(format!("H={h}, event {event}: unexpected eviction {evicted:?}"))
                }
                Some(_) => evictions += 1,
                None => {}
            }
        }
    }
    Ok(format!("3 traces of {EVENTS} events, {evictions} evictions match the brute-force minimum"))
}

// ---------------------------------------------------------------- proxy

async fn spawn(app: axum::Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn identity_end_to_end(rt: &Runtime) -> Outcome {
    rt.block_on(async {
        let stub = Arc::new(StubUpstream::new(Duration::from_millis(5)));
        let upstream_addr = spawn(stub_router(stub.clone())).await;
        let client = EndpointClient::new(EndpointConfig::new(format!("http://{upstream_addr}/sparql")))
            .map_err(|e| e.to_string())?;
        let mut config = ServiceConfig::new(CachePolicyConfig::new(100));
        config.suggestion_enabled = false;
        let service = QueryService::start(config, Arc::new(client), None)?;
        let proxy = spawn(router(service)).await;
        let query = "SELECT ?film WHERE { ?film <http://dbpedia.org/ontology/director> <http://dbpedia.org/resource/Alfonso_Cuaron> }";
        let http = reqwest::Client::new();
        let mut seen = Vec::new();
        for _ in 0..2 {
            let resp = http
                .get(format!("http://{proxy}/sparql?query={}", sparqlcache_bench::log::encode(query)))
                .send()
                .await
                .map_err(|e| e.to_string())?;
            let header = resp
                .headers()
                .get("x-cache")
                .and_then(|v| v.to_str().ok())
                .unwrap_or("")
                .to_string();
            seen.push((header, resp.bytes().await.map_err(|e| e.to_string())?));
        }
        let calls = stub.calls();
        ensure(
            calls == 1 && seen[0].0 == "MISS" && seen[1].0 == "HIT" && seen[0].1 == seen[1].1 && !seen[0].1.is_empty(),
            format!(
                "upstream calls {calls}, x-cache {} then {}, bodies identical: {}",
                seen[0].0,
                seen[1].0,
                seen[0].1 == seen[1].1
            ),
        )
    })
}

// ---------------------------------------------------------------- prefetch

/// A 2,000-query workload of template variants that differ in one entity,
/// split into 1,000 training and 1,000 test queries.
struct Similarity {
    test: QueryLog,
    model: TrainedModel,
    capacity: usize,
    distinct: usize,
}

impl Similarity {
    fn build() -> Result<Self, String> {
        let spec = WorkloadSpec {
            n_queries: 2000,
            zipf_exponent: 1.0,
            value_pool_size: 100,
            repeat_fraction: 0.2,
            session_length: 20,
            varied_slots: Some(1),
            seed: 1,
        };
        let templates = TemplateSet::bundled();
        let log = sparqlcache_bench::generate(&spec, &templates).map_err(|e| e.to_string())?;
        let (train, test) = log
            .split(SplitRule::Counts { train: 1000, test: 1000 })
            .map_err(|e| e.to_string())?;
        let model = experiment::train_template(&train, &templates).map_err(|e| e.to_string())?;
        let distinct = test.queries().collect::<HashSet<_>>().len();
        Ok(Self {
            test,
            model,
            capacity: distinct / 2,
            distinct,
        })
    }

    fn config(&self, mode: Mode) -> ReplayConfig {
        ReplayConfig::new(mode, CachePolicyConfig::new(self.capacity))
    }
}

fn prefetch_beats_identity(rt: &Runtime, w: &Similarity) -> Outcome {
    let start = Instant::now();
    let stub = || -> Arc<dyn Upstream> { Arc::new(StubUpstream::new(Duration::from_millis(5))) };
    let engine = w.model.engine().map_err(|e| e.to_string())?;
    let identity = rt
        .block_on(replay(&w.test, &w.config(Mode::IdentityCache), stub(), None))
        .map_err(|e| e.to_string())?
        .report
        .hit_rate();
    let prefetch = rt
        .block_on(replay(&w.test, &w.config(Mode::PrefetchCache), stub(), Some(engine)))
        .map_err(|e| e.to_string())?
        .report
        .hit_rate();
    ensure(
        prefetch > identity && identity > 0.0,
        format!(
            "second-run hit rate prefetch {prefetch:.4} vs identity {identity:.4} (H={} of {} distinct, k=10, {:.0}s)",
            w.capacity,
            w.distinct,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn k_trend(rt: &Runtime, w: &Similarity) -> Outcome {
    let stub: Arc<dyn Upstream> = Arc::new(StubUpstream::new(Duration::ZERO));
    let rows = rt
        .block_on(experiment::sweep(
            &w.test,
            SweepParameter::K,
            &K_SWEEP,
            &w.config(Mode::PrefetchCache),
            ModelSource::Trained(&w.model),
            stub,
        ))
        .map_err(|e| e.to_string())?;
    let rates: Vec<f64> = rows.iter().map(|r| r.hit_rate).collect();
    let drops: Vec<f64> = rates.windows(2).map(|p| p[0] - p[1]).filter(|d| *d > 0.0).collect();
    let table = rows
        .iter()
        .map(|r| format!("k={}:{:.4}", r.value, r.hit_rate))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(
        drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.005 + 1e-12),
        format!("{table} ({} inversions)", drops.len()),
    )
}

// ---------------------------------------------------------------- features

fn feature_cost() -> Outcome {
    const N: usize = 1000;
    let spec = WorkloadSpec {
        n_queries: 4000,
        value_pool_size: 100,
        repeat_fraction: 0.0,
        seed: 8,
        ..WorkloadSpec::default()
    };
    let templates = TemplateSet::bundled();
    let log = sparqlcache_bench::generate(&spec, &templates).map_err(|e| e.to_string())?;
    let mut seen = HashSet::new();
    let distinct: Vec<String> = log
        .queries()
        .filter(|q| seen.insert(q.to_string()))
        .take(N)
        .map(str::to_string)
        .collect();
    if distinct.len() < N {
        return Err(format!("only {} distinct training queries", distinct.len()));
    }
    let train = QueryLog::from_queries(distinct);
    let template = experiment::train_template(&train, &templates).map_err(|e| e.to_string())?;
    let cluster = experiment::train_cluster(&train, 10, 7).map_err(|e| e.to_string())?;
    let pairs = (N * (N - 1) / 2) as u64;
    let (t_ms, c_ms) = (
        template.wall.as_secs_f64() * 1e3,
        cluster.trained.wall.as_secs_f64() * 1e3,
    );
    ensure(
        template.ged_calls == (N * templates.len()) as u64
            && cluster.clustering_ged_calls == pairs
            && cluster.trained.ged_calls >= pairs
            && template.wall < cluster.trained.wall,
        format!(
            "n={N}: template {} calls in {t_ms:.0} ms, cluster {} calls ({} pairwise) in {c_ms:.0} ms",
            template.ged_calls, cluster.trained.ged_calls, cluster.clustering_ged_calls
        ),
    )
}

// ---------------------------------------------------------------- MSES vs LRU

fn shifted_zipf_trace(requests: usize, universe: usize, seed: u64) -> Result<Vec<String>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(universe as f64, 1.0).map_err(|e| e.to_string())?;
    Ok((0..requests)
        .map(|i| {
            let rank = zipf.sample(&mut rng) as usize - 1;
            // After the midpoint the popular ranks move to keys that were cold.
            let key = if i < requests / 2 { rank } else { (rank + universe / 2) % universe };
            format!("key{key:05}")
        })
        .collect())
}

fn hit_rate(trace: &[String], config: CachePolicyConfig) -> Result<f64, String> {
    let mut store = CacheStore::new(config).map_err(|e| e.to_string())?;
    for key in trace {
        let now = store.tick();
        let key = CanonicalKey(key.clone());
        if store.lookup(&key, now).is_none() {
            store
                .insert(CacheEntry::new(key, vec![0u8; 64], "application/json", Origin::Direct), now)
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(store.stats().hit_rate)
}

fn mses_vs_lru() -> Outcome {
    let trace = shifted_zipf_trace(40_000, 4000, 9)?;
    let distinct = trace.iter().collect::<HashSet<_>>().len();
    let h = (distinct as f64 * 0.05).round() as usize;
    let lru = hit_rate(&trace, CachePolicyConfig::new(h).with_policy(Policy::Lru))?;
    let mut ok = true;
    let mut rates = Vec::new();
    // The default alpha first, then smaller ones that weigh frequency more.
    for alpha in [sparqlcache_core::cache::DEFAULT_ALPHA, 0.1, 0.03, 0.01] {
        let mses = hit_rate(&trace, CachePolicyConfig::new(h).with_alpha(alpha))?;
        ok &= mses >= lru;
        rates.push(format!("a={alpha}:{mses:.4}"));
    }
    ensure(
        ok,
        format!("H={h} of {distinct} distinct keys: LRU {lru:.4}, MSES {}", rates.join(" ")),
    )
}

// ---------------------------------------------------------------- non-blocking

fn p95_latency(rt: &Runtime, queries: &[String], engine: Option<SuggestionEngine>) -> Result<(f64, u64), String> {
    rt.block_on(async {
        let stub = Arc::new(StubUpstream::new(Duration::from_millis(5)));
        let mut config = ServiceConfig::new(CachePolicyConfig::new(1000));
        config.suggestion_enabled = engine.is_some();
        config.prefetch_stall = Duration::from_secs(1);
        let service = QueryService::start(config, stub, engine)?;
        let mut latencies = Vec::with_capacity(queries.len());
        for q in queries {
            let start = Instant::now();
            service.handle(q).await.map_err(|e| e.to_string())?;
            latencies.push(start.elapsed().as_secs_f64() * 1e3);
        }
        latencies.sort_by(f64::total_cmp);
        Ok((percentile(&latencies, 95.0), service.stats().prefetches_dropped))
    })
}

fn non_blocking_prefetch(rt: &Runtime, w: &Similarity) -> Outcome {
    const REQUESTS: usize = 500;
    let spec = WorkloadSpec {
        n_queries: 3000,
        value_pool_size: 1000,
        repeat_fraction: 0.0,
        seed: 10,
        ..WorkloadSpec::default()
    };
    let log = sparqlcache_bench::generate(&spec, &w.model.templates).map_err(|e| e.to_string())?;
    let mut seen = HashSet::new();
    let queries: Vec<String> = log
        .queries()
        .filter(|q| seen.insert(q.to_string()))
        .take(REQUESTS)
        .map(str::to_string)
        .collect();
    if queries.len() < REQUESTS {
        return Err(format!("only {} distinct requests", queries.len()));
    }
    let (baseline, _) = p95_latency(rt, &queries, None)?;
    let engine = w.model.engine().map_err(|e| e.to_string())?;
    let (stalled, dropped) = p95_latency(rt, &queries, Some(engine))?;
    ensure(
        stalled < 2.0 * baseline,
        format!("{REQUESTS} requests: p95 {stalled:.2} ms with stalled prefetch vs {baseline:.2} ms without ({dropped} tasks dropped)"),
    )
}

// ---------------------------------------------------------------- parser

fn parser_corpus() -> Outcome {
    let cases = corpus::load();
    let mut types = [false; 8];
    for c in &cases {
        for &t in &c.types {
            types[t as usize] = true;
        }
    }
    let rejections = cases.iter().filter(|c| c.error.is_some()).count();
    let coverage = cases.len() >= 40
        && types.iter().all(|&t| t)
        && cases.iter().any(|c| c.optional > 0)
        && cases.iter().any(|c| c.union > 0)
        && cases.iter().any(|c| c.filters > 0);
    let failures: Vec<String> = cases
        .iter()
        .filter_map(|c| corpus::check(c).err().map(|e| format!("{}: {e}", c.name)))
        .collect();
    ensure(
        coverage && failures.is_empty(),
        format!(
            "{} cases ({rejections} rejections), coverage complete: {coverage}, failures: {}",
            cases.len(),
            if failures.is_empty() { "none".to_string() } else { failures.join("; ") }
        ),
    )
}

// ---------------------------------------------------------------- driver

fn run(id: usize, name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} {id:>2} {name:<24} {detail} [{secs:.1}s]");
    ok
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    let workload = Similarity::build();
    let with_workload = |f: &dyn Fn(&Similarity) -> Outcome| match &workload {
        Ok(w) => f(w),
        Err(e) => Err(format!("workload: {e}")),
    };
    let results = [
        run(1, "ged-upper-bound", ged_bound),
        run(2, "knn-exactness", knn_exact),
        run(3, "mses-closed-form", mses_closed_form),
        run(4, "replacement-oracle", replacement_oracle),
        run(5, "identity-end-to-end", || identity_end_to_end(&rt)),
        run(6, "prefetch-effectiveness", || with_workload(&|w| prefetch_beats_identity(&rt, w))),
        run(7, "k-monotonic-trend", || with_workload(&|w| k_trend(&rt, w))),
        run(8, "feature-modelling-cost", feature_cost),
        run(9, "mses-vs-lru", mses_vs_lru),
        run(10, "non-blocking-prefetch", || with_workload(&|w| non_blocking_prefetch(&rt, w))),
        run(11, "parser-corpus", parser_corpus),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
