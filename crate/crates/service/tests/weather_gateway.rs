//! Live-mode gateway against a local stand-in for the weather endpoint.

mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::get;
use axum::Router;
use common::WEATHER_DOC;
use evote_service::config::{GatewayConfig, WeatherMode};
use evote_service::gateway::{GatewayError, WeatherGateway};

const KEY: &str = "test-key";

async fn weather(State(hits): State<Arc<AtomicUsize>>, Query(q): Query<HashMap<String, String>>) -> (StatusCode, String) {
    hits.fetch_add(1, Ordering::SeqCst);
    if q.get("appid").map(String::as_str) != Some(KEY) {
        return (StatusCode::UNAUTHORIZED, r#"{"cod":401,"message":"Invalid API key"}"#.into());
    }
    match (q.get("lat").map(String::as_str), q.get("lon").map(String::as_str)) {
        (Some("6.91"), Some("79.97")) => (StatusCode::OK, WEATHER_DOC.into()),
        (Some("0"), Some("0")) => (StatusCode::OK, "{not json".into()),
        _ => (StatusCode::OK, r#"{"main":{"temp":280.15,"humidity":40},"wind":{"speed":1},"clouds":{"all":0}}"#.into()),
    }
}

async fn mock() -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let app = Router::new().route("/data/2.5/weather", get(weather)).with_state(hits.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), hits)
}

fn live(base_url: &str, key: &str) -> WeatherGateway {
    WeatherGateway::new(GatewayConfig {
        mode: WeatherMode::Live,
        base_url: base_url.to_string(),
        api_key: Some(key.to_string()),
        timeout_secs: 2,
        retries: 2,
        fixture_dir: None,
    })
}

#[tokio::test]
async fn live_fetch_normalizes_units() {
    let (base, hits) = mock().await;
    let obs = live(&base, KEY).fetch_current(6.91, 79.97, 5).await.unwrap();
    assert!((obs.temperature_c - 28.0).abs() < 1e-9);
    assert_eq!(obs.visibility_km, 8.0);
    assert_eq!(obs.observed_at, 1_700_000_000);
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    let obs = live(&base, KEY).fetch_current(10.0, 10.0, 5).await.unwrap();
    assert_eq!(obs.visibility_km, 10.0);
    assert_eq!(obs.observed_at, 5);
}

#[tokio::test]
async fn wrong_key_is_reported_without_retrying() {
    let (base, hits) = mock().await;
    let g = live(&base, "wrong");
    match g.fetch_current(6.91, 79.97, 0).await {
        Err(GatewayError::BadStatus { status: 401, detail }) => assert_eq!(detail, "invalid key"),
        other => panic!("{other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    let h = g.healthcheck().await;
    assert!(!h.ok);
    assert_eq!(h.detail, "invalid key");
}

#[tokio::test]
async fn malformed_body_is_an_error() {
    let (base, _) = mock().await;
    assert!(matches!(
        live(&base, KEY).fetch_current(0.0, 0.0, 0).await,
        Err(GatewayError::MalformedResponse(_))
    ));
}

#[tokio::test]
async fn healthy_live_endpoint() {
    let (base, _) = mock().await;
    let h = live(&base, KEY).healthcheck().await;
    // the probe checks reachability and the key, not the body
    assert!(h.ok, "{h:?}");
}

#[tokio::test]
async fn unreachable_weather_maps_to_bad_gateway() {
    let config = evote_service::config::ServiceConfig {
        weather: GatewayConfig {
            mode: WeatherMode::Live,
            base_url: "http://127.0.0.1:9".into(),
            api_key: Some(KEY.into()),
            timeout_secs: 1,
            retries: 0,
            fixture_dir: None,
        },
        ..Default::default()
    };
    let (t, v) = common::models();
    let service = evote_service::service::Service::in_memory(
        &config,
        Arc::new(evote_service::service::ManualClock::new(common::T0)),
        1,
        evote_service::service::Predictors::with_models(t, v),
    );
    let err = service.predict_turnout(6.91, 79.97, 100).await.unwrap_err();
    assert_eq!(err.status, 502);
    assert_eq!(err.code, "weather_unavailable");
}
