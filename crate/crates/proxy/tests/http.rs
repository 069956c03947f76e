use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use sparqlcache_core::CachePolicyConfig;
use sparqlcache_proxy::{
    router, stub_router, EndpointClient, EndpointConfig, ExecuteError, QueryService, ServiceConfig, StubUpstream,
};

async fn spawn(app: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

async fn stub_endpoint(latency: Duration) -> (Arc<StubUpstream>, String) {
    let stub = Arc::new(StubUpstream::new(latency));
    let addr = spawn(stub_router(stub.clone())).await;
    (stub, format!("http://{addr}/sparql"))
}

fn client(url: &str, timeout: Duration) -> EndpointClient {
    EndpointClient::new(EndpointConfig {
        timeout,
        max_retries: 0,
        ..EndpointConfig::new(url)
    })
    .unwrap()
}

const Q: &str = "SELECT ?s WHERE { ?s <http://dbpedia.org/ontology/country> <http://dbpedia.org/resource/Peru> }";

#[tokio::test]
async fn client_returns_body_verbatim() {
    let (stub, url) = stub_endpoint(Duration::ZERO).await;
    let r = client(&url, Duration::from_secs(5)).execute(Q).await.unwrap();
    assert_eq!(r.status, 200);
    assert_eq!(r.body, StubUpstream::body_for(Q));
    assert_eq!(r.media_type, "application/sparql-results+json");
    assert_eq!(stub.calls_for(Q), 1);
}

#[tokio::test]
async fn long_queries_are_posted() {
    let (stub, url) = stub_endpoint(Duration::ZERO).await;
    let long = format!("SELECT * WHERE {{ ?s ?p \"{}\" }}", "x".repeat(3000));
    let r = client(&url, Duration::from_secs(5)).execute(&long).await.unwrap();
    assert_eq!(r.body, StubUpstream::body_for(&long));
    assert_eq!(stub.calls_for(&long), 1);
}

#[tokio::test]
async fn upstream_status_and_timeout_are_distinguished() {
    let (stub, url) = stub_endpoint(Duration::ZERO).await;
    stub.set_failure(Some(ExecuteError::Upstream {
        status: 503,
        snippet: "overloaded".into(),
    }));
    let err = client(&url, Duration::from_secs(5)).execute(Q).await.unwrap_err();
    assert_eq!(
        err,
        ExecuteError::Upstream {
            status: 503,
            snippet: "overloaded".into()
        }
    );

    let (_, slow) = stub_endpoint(Duration::from_millis(500)).await;
    let err = client(&slow, Duration::from_millis(100)).execute(Q).await.unwrap_err();
    assert_eq!(err, ExecuteError::Timeout(Duration::from_millis(100)));
}

#[tokio::test]
async fn oversize_results_and_bad_config_are_errors() {
    let (_, url) = stub_endpoint(Duration::ZERO).await;
    let c = EndpointClient::new(EndpointConfig {
        max_result_bytes: 10,
        ..EndpointConfig::new(&url)
    })
    .unwrap();
    assert_eq!(c.execute(Q).await.unwrap_err(), ExecuteError::ResultTooLarge { limit: 10 });
    assert_eq!(c.execute(" ").await.unwrap_err(), ExecuteError::EmptyQuery);
    assert!(EndpointClient::new(EndpointConfig::new("ftp://x/")).is_err());
    assert!(EndpointClient::new(EndpointConfig::new("not a url")).is_err());
    let unreachable = client("http://127.0.0.1:9/sparql", Duration::from_secs(2));
    assert!(matches!(unreachable.execute(Q).await, Err(ExecuteError::ConnectionFailed(_))));
}

async fn fetch_stats(http: &reqwest::Client, base: &str) -> serde_json::Value {
    let body = http.get(format!("{base}/stats")).send().await.unwrap().bytes().await.unwrap();
    serde_json::from_slice(&body).unwrap()
}

async fn proxy() -> (Arc<StubUpstream>, String) {
    let (stub, url) = stub_endpoint(Duration::ZERO).await;
    let upstream = client(&url, Duration::from_secs(1));
    let svc = QueryService::start(ServiceConfig::new(CachePolicyConfig::new(8)), Arc::new(upstream), None).unwrap();
    let addr = spawn(router(svc)).await;
    (stub, format!("http://{addr}"))
}

#[tokio::test]
async fn proxy_serves_hits_and_misses() {
    let (stub, base) = proxy().await;
    let http = reqwest::Client::new();
    let get = |q: &str| {
        let mut url = reqwest::Url::parse(&format!("{base}/sparql")).unwrap();
        url.query_pairs_mut().append_pair("query", q);
        http.get(url).send()
    };
    let a = get(Q).await.unwrap();
    assert_eq!(a.status(), 200);
    assert_eq!(a.headers()["x-cache"], "MISS");
    assert_eq!(a.headers()["content-type"], "application/sparql-results+json");
    let a_body = a.bytes().await.unwrap();

    let b = http
        .post(format!("{base}/sparql"))
        .header("content-type", "application/sparql-query")
        .body(Q.replace(' ', "  "))
        .send()
        .await
        .unwrap();
    assert_eq!(b.headers()["x-cache"], "HIT");
    assert_eq!(b.bytes().await.unwrap(), a_body);

    let form = form_urlencoded::Serializer::new(String::new()).append_pair("query", Q).finish();
    let c = http
        .post(format!("{base}/sparql"))
        .header("content-type", "application/x-www-form-urlencoded")
        .body(form)
        .send()
        .await
        .unwrap();
    assert_eq!(c.headers()["x-cache"], "HIT");
    assert_eq!(stub.calls(), 1);

    let stats = fetch_stats(&http, &base).await;
    assert_eq!(stats["hitCount"], 2);
    assert_eq!(stats["missCount"], 1);
    assert_eq!(stats["entryCount"], 1);

    let r = http.post(format!("{base}/admin/flush?keep_counters=true")).send().await.unwrap();
    assert_eq!(r.status(), 204);
    let stats = fetch_stats(&http, &base).await;
    assert_eq!(stats["entryCount"], 0);
    assert_eq!(stats["hitCount"], 2);
    assert_eq!(get(Q).await.unwrap().headers()["x-cache"], "MISS");
}

#[tokio::test]
async fn proxy_maps_errors_to_status_codes() {
    let (stub, base) = proxy().await;
    let http = reqwest::Client::new();
    assert_eq!(http.get(format!("{base}/healthz")).send().await.unwrap().status(), 200);
    assert_eq!(http.get(format!("{base}/sparql")).send().await.unwrap().status(), 400);
    let r = http
        .post(format!("{base}/sparql"))
        .header("content-type", "text/plain")
        .body(Q)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 415);

    stub.set_failure(Some(ExecuteError::Upstream {
        status: 500,
        snippet: "bad".into(),
    }));
    let mut url = reqwest::Url::parse(&format!("{base}/sparql")).unwrap();
    url.query_pairs_mut().append_pair("query", Q);
    assert_eq!(http.get(url.clone()).send().await.unwrap().status(), 502);
    stub.set_failure(None);
    let r = http.get(url).send().await.unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.headers()["x-cache"], "MISS");
}

#[tokio::test]
async fn proxy_reports_gateway_timeout() {
    let (_, url) = stub_endpoint(Duration::from_millis(400)).await;
    let svc = QueryService::start(
        ServiceConfig::new(CachePolicyConfig::new(8)),
        Arc::new(client(&url, Duration::from_millis(100))),
        None,
    )
    .unwrap();
    let base = format!("http://{}", spawn(router(svc)).await);
    let mut u = reqwest::Url::parse(&format!("{base}/sparql")).unwrap();
    u.query_pairs_mut().append_pair("query", Q);
    assert_eq!(reqwest::get(u).await.unwrap().status(), 504);
}
