#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use base64::Engine as _;
use evote_core::forest::{ForestParams, SplitSpec};
use evote_core::system::Role;
use evote_core::turnout::{self, TurnoutModel};
use evote_core::violence::{self, ViolenceModel};
use evote_service::config::{GatewayConfig, ServiceConfig, StaffEntry, WeatherMode};
use evote_service::http::router;
use evote_service::service::{EnrollRequest, ManualClock, Predictors, Service};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const T0: u64 = 1_700_000_000;
pub const SUPER_ADMIN: &str = "900000000V";
pub const ADMIN: &str = "900000001V";
pub const OFFICER: &str = "900000002V";

pub const WEATHER_DOC: &str =
    r#"{"main":{"temp":301.15,"humidity":70},"visibility":8000,"wind":{"speed":2.5},"clouds":{"all":20},"dt":1700000000}"#;

#[derive(Debug, Clone)]
pub struct Person {
    pub nic: String,
    pub area: String,
    pub fingerprint: String,
    pub face: String,
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn person(nic: &str, area: &str) -> Person {
    let seed: u32 = nic.bytes().map(u32::from).sum();
    let fp: Vec<u8> = (0..256u32).map(|i| (i.wrapping_mul(31) ^ seed.wrapping_mul(7)) as u8).collect();
    let face: Vec<u8> = (0..512u32).map(|i| (i.wrapping_mul(17) + seed) as u8).collect();
    Person {
        nic: nic.to_string(),
        area: area.to_string(),
        fingerprint: b64(&fp),
        face: b64(&face),
    }
}

impl Person {
    pub fn enroll_request(&self) -> EnrollRequest {
        EnrollRequest {
            nic: self.nic.clone(),
            full_name: format!("Person {}", self.nic),
            area_code: self.area.clone(),
            fingerprint: self.fingerprint.clone(),
            face: self.face.clone(),
        }
    }

    pub fn enroll_body(&self) -> Value {
        json!({
            "nic": self.nic,
            "full_name": format!("Person {}", self.nic),
            "area_code": self.area,
            "fingerprint": self.fingerprint,
            "face": self.face,
        })
    }

    pub fn auth_body(&self) -> Value {
        json!({ "nic": self.nic, "fingerprint": self.fingerprint, "face": self.face })
    }
}

/// Small models shared by every test in a binary.
pub fn models() -> (TurnoutModel, ViolenceModel) {
    static MODELS: OnceLock<(TurnoutModel, ViolenceModel)> = OnceLock::new();
    MODELS
        .get_or_init(|| {
            let params = ForestParams {
                n_trees: 20,
                ..ForestParams::with_seed(1)
            };
            let split = SplitSpec::new(0.7, 0.15, 0.15, 1);
            let t = turnout::train_turnout_model(&turnout::generate_training_data(300, 1), &split, &params).unwrap();
            let v = violence::train_violence_model(&violence::generate_training_data(300, 1), &split, &params).unwrap();
            (t.model, v.model)
        })
        .clone()
}

pub fn staff_config(fixture_dir: &Path) -> ServiceConfig {
    ServiceConfig {
        weather: GatewayConfig {
            mode: WeatherMode::Fixture,
            fixture_dir: Some(fixture_dir.to_path_buf()),
            ..GatewayConfig::default()
        },
        staff: vec![
            StaffEntry {
                nic: SUPER_ADMIN.into(),
                role: Role::SuperAdmin,
            },
            StaffEntry {
                nic: ADMIN.into(),
                role: Role::Admin,
            },
            StaffEntry {
                nic: OFFICER.into(),
                role: Role::Officer,
            },
        ],
        ..ServiceConfig::default()
    }
}

pub struct Harness {
    pub service: Arc<Service>,
    pub clock: Arc<ManualClock>,
    pub app: Router,
    pub dir: tempfile::TempDir,
}

impl Harness {
    /// In-memory service with enrolled staff, a weather fixture for
    /// (6.91, 79.97) and three areas of violence history.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("6.91_79.97.json"), WEATHER_DOC).unwrap();
        let config = staff_config(dir.path());
        let clock = Arc::new(ManualClock::new(T0));
        let (t, v) = models();
        let mut predictors = Predictors::with_models(t, v);
        predictors.areas = violence::generate_training_data(3, 5).into_iter().map(|r| r.history).collect();
        let service = Arc::new(Service::in_memory(&config, clock.clone(), 11, predictors));
        for nic in [SUPER_ADMIN, ADMIN, OFFICER] {
            service.enroll_as_operator(&person(nic, "STAFF").enroll_request(), "setup").unwrap();
        }
        Self {
            app: router(service.clone()),
            service,
            clock,
            dir,
        }
    }

    pub async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (u16, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status().as_u16();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn login(&self, p: &Person) -> String {
        let (status, body) = self.call(Method::POST, "/api/auth/biometric", None, Some(p.auth_body())).await;
        assert_eq!(status, 200, "{body}");
        body["session_token"].as_str().unwrap().to_string()
    }

    pub async fn staff(&self, nic: &str) -> String {
        self.login(&person(nic, "STAFF")).await
    }

    /// Draft election over `areas` with candidates A and B, open all day.
    pub async fn create_election(&self, areas: &[&str]) -> String {
        let admin = self.staff(ADMIN).await;
        let (status, body) = self
            .call(Method::POST, "/api/elections", Some(&admin), Some(draft(areas)))
            .await;
        assert_eq!(status, 201, "{body}");
        body["election_id"].as_str().unwrap().to_string()
    }

    pub async fn open_election(&self, areas: &[&str]) -> String {
        let id = self.create_election(areas).await;
        let admin = self.staff(ADMIN).await;
        let (status, body) = self
            .call(Method::POST, &format!("/api/elections/{id}/open"), Some(&admin), None)
            .await;
        assert_eq!(status, 200, "{body}");
        id
    }

    pub async fn enroll(&self, p: &Person) {
        let officer = self.staff(OFFICER).await;
        let (status, body) = self
            .call(Method::POST, "/api/voters", Some(&officer), Some(p.enroll_body()))
            .await;
        assert_eq!(status, 201, "{body}");
    }
}

pub fn draft(areas: &[&str]) -> Value {
    json!({
        "name": "General",
        "area_codes": areas,
        "candidates": [
            {"candidate_id": "A", "display_name": "Alpha"},
            {"candidate_id": "B", "display_name": "Beta"},
        ],
        "opens_at": T0,
        "closes_at": T0 + 36_000,
    })
}
