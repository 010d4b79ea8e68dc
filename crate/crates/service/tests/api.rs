use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use pview_core::eval::SyntheticSpec;
use pview_core::mechanisms::RandomStream;
use pview_core::partition::MechanismParams;
use pview_core::view::{BuildMeta, ViewBlock};
use pview_core::{build_view, codec, BisectionOptions, Hyperparams, IndexRange, PView, Schema, ViewKind};
use pview_service::{router, BlocksResponse, QueryResponse, SchemaResponse, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

fn built_view() -> PView {
    let t = SyntheticSpec::Clustered {
        domains: vec![16, 16, 8],
        records: 4000,
        clusters: 3,
        spread: 0.1,
    }
    .generate(&mut RandomStream::new(1))
    .unwrap();
    build_view(&t, &Hyperparams::default(), 42, &BisectionOptions::default())
        .unwrap()
        .view
}

/// Writes the view to a fresh directory and loads it back from there, so
/// the app only ever sees the view file.
fn app_from_file() -> (Router, PView) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("view.hdpv");
    codec::write_view(&path, &built_view()).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let view = codec::read_view(&path).unwrap();
    (router(Some(Arc::new(view.clone())), &ServiceConfig::default()), view)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let body = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, body.to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/query")
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    send(app, req).await
}

#[tokio::test]
async fn no_view_is_unavailable() {
    let app = router(None, &ServiceConfig::default());
    assert_eq!(get(&app, "/schema").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(post(&app, "{}").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(get(&app, "/blocks?x=a0&y=a1").await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn schema_lists_attributes_and_no_counts() {
    let (app, view) = app_from_file();
    let (status, body) = get(&app, "/schema").await;
    assert_eq!(status, StatusCode::OK);
    let s: SchemaResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(s.schema, view.schema);
    assert_eq!(s.block_count, view.block_count());
    let raw: Value = serde_json::from_slice(&body).unwrap();
    let keys: Vec<&str> = raw.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["block_count", "kind", "meta", "params", "schema"]);
    assert_eq!(raw["schema"]["attributes"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn full_domain_query_returns_total() {
    let (app, view) = app_from_file();
    let (status, body) = post(&app, r#"{"ranges": {}, "mu": 0.05}"#).await;
    assert_eq!(status, StatusCode::OK);
    let r: QueryResponse = serde_json::from_slice(&body).unwrap();
    assert!((r.answer - view.total_noisy_count()).abs() < 1e-9);
    assert_eq!(r.blocks_touched, view.block_count());
    assert!(r.theta_min >= 0.0 && r.theta_max >= r.theta_min);
    assert_eq!(r.mu, 0.05);
}

#[tokio::test]
async fn restricted_query_and_mu_monotonicity() {
    let (app, view) = app_from_file();
    let body = |mu: f64| format!(r#"{{"ranges": {{"a0": {{"lo": 2, "hi": 9}}, "a2": {{"lo": "1", "hi": "3"}}}}, "mu": {mu}}}"#);
    let (s1, b1) = post(&app, &body(0.05)).await;
    let (s2, b2) = post(&app, &body(0.01)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    let (r1, r2): (QueryResponse, QueryResponse) = (serde_json::from_slice(&b1).unwrap(), serde_json::from_slice(&b2).unwrap());
    assert!(r2.theta_max > r1.theta_max);
    assert!(r1.blocks_touched <= view.block_count());
    let q = pview_core::RangeQuery::parse(&view.schema, "a0@2:9,a2@1:3").unwrap();
    assert_eq!(r1.answer, view.answer(&q).unwrap());
}

#[tokio::test]
async fn identical_requests_identical_bodies() {
    let (app, _) = app_from_file();
    let req = r#"{"ranges": {"a1": {"lo": 0, "hi": 4}}, "mu": 0.2}"#;
    let strip = |b: Vec<u8>| {
        let mut v: Value = serde_json::from_slice(&b).unwrap();
        v.as_object_mut().unwrap().remove("elapsed_ms");
        serde_json::to_vec(&v).unwrap()
    };
    let a = strip(post(&app, req).await.1);
    let b = strip(post(&app, req).await.1);
    assert_eq!(a, b);
}

#[tokio::test]
async fn request_errors() {
    let (app, _) = app_from_file();
    let field = |b: &[u8]| serde_json::from_slice::<Value>(b).unwrap()["field"].as_str().map(str::to_owned);

    assert_eq!(post(&app, "{not json").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, r#"{"mu": "high"}"#).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, r#"{"rangez": {}}"#).await.0, StatusCode::BAD_REQUEST);

    let (s, b) = post(&app, r#"{"ranges": {"height": {"lo": 0, "hi": 1}}}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(field(&b).as_deref(), Some("ranges.height"));

    let (s, b) = post(&app, r#"{"ranges": {"a0": {"lo": 5, "hi": 2}}}"#).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(field(&b).as_deref(), Some("ranges.a0"));

    let (s, b) = post(&app, r#"{"ranges": {"a0": {"lo": 0, "hi": 99}}}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(field(&b).as_deref(), Some("ranges.a0"));

    let (s, b) = post(&app, r#"{"ranges": {}, "mu": 1.5}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(field(&b).as_deref(), Some("mu"));
}

#[tokio::test]
async fn raw_value_ranges_use_binning() {
    let schema = Schema::from_json(
        r#"{"attributes": [
            {"name": "age", "kind": "numeric", "bin_edges": [0, 10, 20, 30, 40]},
            {"name": "color", "kind": "categorical", "categories": ["red", "green", "blue"]}
        ]}"#,
    )
    .unwrap();
    let blocks = (0..4)
        .flat_map(|a| (0..3).map(move |c| (a, c)))
        .map(|(a, c)| ViewBlock {
            ranges: vec![IndexRange::new(a, a).unwrap(), IndexRange::new(c, c).unwrap()],
            noisy_sum: f64::from(10 * a + c),
            depth: 0,
        })
        .collect();
    let view = PView {
        kind: ViewKind::Identity,
        schema,
        params: MechanismParams::perturbation_only(1.0).unwrap(),
        meta: BuildMeta::new(None),
        blocks,
    };
    let app = router(Some(Arc::new(view)), &ServiceConfig::default());
    let (s, b) = post(&app, r#"{"ranges": {"age": {"lo": 20, "hi": 30, "raw": true}, "color": {"lo": "green", "hi": "blue", "raw": true}}}"#).await;
    assert_eq!(s, StatusCode::OK);
    let r: QueryResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(r.answer, 21.0 + 22.0);
    assert_eq!(r.blocks_touched, 2);
    let (s, _) = post(&app, r#"{"ranges": {"color": {"lo": "blue", "hi": "red", "raw": true}}}"#).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn blocks_projection() {
    let (app, view) = app_from_file();
    let (s, b) = get(&app, "/blocks?x=a0&y=a1").await;
    assert_eq!(s, StatusCode::OK);
    let p: BlocksResponse = serde_json::from_slice(&b).unwrap();
    assert!(p.rectangles.len() <= view.block_count());
    assert_eq!(p.rectangles.iter().map(|r| r.blocks).sum::<usize>(), view.block_count());
    let total: f64 = p.rectangles.iter().map(|r| r.noisy_count).sum();
    assert!((total - view.total_noisy_count()).abs() < 1e-6);
    for r in &p.rectangles {
        let served: f64 = view
            .blocks
            .iter()
            .filter(|b| b.ranges[0] == r.x && b.ranges[1] == r.y)
            .map(|b| b.noisy_sum)
            .sum();
        assert_eq!(r.noisy_count, served);
        assert_eq!(r.density, served / (r.x.extent() * r.y.extent()) as f64);
    }
    assert_eq!(get(&app, "/blocks?x=a0&y=nope").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/blocks?x=a0").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn single_block_view_projects_to_plane() {
    let schema = Schema::from_domains(&[5, 7]).unwrap();
    let view = PView {
        kind: ViewKind::Bisection,
        schema,
        params: MechanismParams::perturbation_only(1.0).unwrap(),
        meta: BuildMeta::new(None),
        blocks: vec![ViewBlock {
            ranges: vec![IndexRange::full(5), IndexRange::full(7)],
            noisy_sum: 70.0,
            depth: 0,
        }],
    };
    let app = router(Some(Arc::new(view)), &ServiceConfig::default());
    let p: BlocksResponse = serde_json::from_slice(&get(&app, "/blocks?x=a1&y=a0").await.1).unwrap();
    assert_eq!(p.rectangles.len(), 1);
    assert_eq!((p.rectangles[0].x, p.rectangles[0].y), (IndexRange::full(7), IndexRange::full(5)));
    assert_eq!(p.rectangles[0].density, 2.0);
}

#[tokio::test]
async fn cors_headers_present() {
    let (app, _) = app_from_file();
    let req = Request::get("/schema").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.headers()["access-control-allow-origin"], "*");

    let restricted = router(None, &ServiceConfig { cors_origins: vec!["http://ui.example".into()] });
    let req = Request::get("/schema").header("origin", "http://ui.example").body(Body::empty()).unwrap();
    let res = restricted.oneshot(req).await.unwrap();
    assert_eq!(res.headers()["access-control-allow-origin"], "http://ui.example");
}

#[tokio::test]
async fn serves_over_tcp_from_view_file() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("only.hdpv");
    codec::write_view(&path, &built_view()).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let view = codec::read_view(&path).unwrap();
    tokio::spawn(async move { pview_service::serve_on(listener, view, &ServiceConfig::default()).await });

    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    let body = r#"{"ranges": {}}"#;
    let req = format!(
        "POST /query HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).await.unwrap();
    assert!(out.starts_with("HTTP/1.1 200"), "{out}");
    assert!(out.contains("\"theta_max\""));
}
