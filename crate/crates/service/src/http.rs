//! Axum routes over [`Service`].

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use evote_core::system::ElectionDraft;
use evote_core::Id128;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::service::{parse_bearer, ApiError, AuthRequest, EnrollRequest, Service};

type Shared = State<Arc<Service>>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, axum::Json(self)).into_response()
    }
}

/// JSON extractor whose rejections use the service error document.
struct Json<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Json<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Json(v)),
            Err(e) => Err(rejection(e)),
        }
    }
}

fn rejection(e: JsonRejection) -> ApiError {
    ApiError::bad_request("invalid_body", e.body_text())
}

fn ok<T: Serialize>(value: T) -> Response {
    axum::Json(value).into_response()
}

fn created<T: Serialize>(value: T) -> Response {
    (StatusCode::CREATED, axum::Json(value)).into_response()
}

fn bearer(headers: &HeaderMap) -> Option<Id128> {
    parse_bearer(headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()))
}

fn election_id(raw: &str) -> Result<Id128, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(404, "unknown_election", format!("no election {raw:?}")))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/voters", post(enroll))
        .route("/api/auth/biometric", post(authenticate))
        .route("/api/elections", post(create_election))
        .route("/api/elections/{id}/open", post(open_election))
        .route("/api/elections/{id}/close", post(close_election))
        .route("/api/elections/{id}/qr-tokens", post(issue_qr))
        .route("/api/qr/redeem", post(redeem_qr))
        .route("/api/elections/{id}/votes", post(cast_vote))
        .route("/api/elections/{id}/tally", get(tally))
        .route("/api/elections/{id}/projection", get(projection))
        .route("/api/predictions/turnout", get(turnout))
        .route("/api/predictions/violence", get(violence))
        .route("/api/audit/verify", get(verify_audit))
        .route("/api/health", get(health))
        .fallback(|| async { ApiError::new(404, "not_found", "no such endpoint") })
        .with_state(service)
}

async fn enroll(State(s): Shared, headers: HeaderMap, Json(req): Json<EnrollRequest>) -> Response {
    match s.enroll(bearer(&headers).as_ref(), &req) {
        Ok(v) => created(serde_json::json!({
            "nic": v.nic,
            "area_code": v.area_code,
            "composite_id": v.composite_id,
            "enrolled_at": v.enrolled_at,
        })),
        Err(e) => e.into_response(),
    }
}

async fn authenticate(State(s): Shared, Json(req): Json<AuthRequest>) -> Response {
    match s.authenticate(&req) {
        Ok(a) if a.accepted => ok(a),
        Ok(a) => (
            StatusCode::UNAUTHORIZED,
            axum::Json(serde_json::json!({
                "error": "biometric_mismatch",
                "message": "biometric match below threshold",
                "fingerprint_score": a.fingerprint_score,
                "face_score": a.face_score,
            })),
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}

async fn create_election(State(s): Shared, headers: HeaderMap, Json(draft): Json<ElectionDraft>) -> Response {
    match s.create_election(bearer(&headers).as_ref(), draft) {
        Ok(e) => created(e),
        Err(e) => e.into_response(),
    }
}

async fn open_election(State(s): Shared, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let result = election_id(&id).and_then(|id| s.open_election(bearer(&headers).as_ref(), &id));
    result.map_or_else(IntoResponse::into_response, ok)
}

async fn close_election(State(s): Shared, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let result = election_id(&id).and_then(|id| s.close_election(bearer(&headers).as_ref(), &id));
    result.map_or_else(IntoResponse::into_response, ok)
}

#[derive(Deserialize)]
struct QrRequest {
    voter_nic: String,
}

async fn issue_qr(State(s): Shared, headers: HeaderMap, Path(id): Path<String>, Json(req): Json<QrRequest>) -> Response {
    let result = election_id(&id).and_then(|id| s.issue_qr(bearer(&headers).as_ref(), &id, &req.voter_nic));
    result.map_or_else(IntoResponse::into_response, created)
}

#[derive(Deserialize)]
struct RedeemRequest {
    payload: String,
}

async fn redeem_qr(State(s): Shared, Json(req): Json<RedeemRequest>) -> Response {
    s.redeem_qr(&req.payload).map_or_else(IntoResponse::into_response, ok)
}

#[derive(Deserialize)]
struct VoteRequest {
    candidate_id: String,
}

async fn cast_vote(State(s): Shared, headers: HeaderMap, Path(id): Path<String>, Json(req): Json<VoteRequest>) -> Response {
    let result = election_id(&id).and_then(|id| s.cast_vote(bearer(&headers).as_ref(), &id, &req.candidate_id));
    result.map_or_else(IntoResponse::into_response, created)
}

async fn tally(State(s): Shared, Path(id): Path<String>) -> Response {
    election_id(&id).and_then(|id| s.tally(&id)).map_or_else(IntoResponse::into_response, ok)
}

#[derive(Deserialize)]
struct ProjectionQuery {
    t: Option<String>,
}

async fn projection(State(s): Shared, Path(id): Path<String>, Query(q): Query<ProjectionQuery>) -> Response {
    let t = match q.t.as_deref().map(str::parse::<f64>) {
        Some(Ok(t)) => t,
        _ => return ApiError::bad_request("invalid_time_fraction", "query parameter t must be a number in (0,1]").into_response(),
    };
    election_id(&id).and_then(|id| s.projection(&id, t)).map_or_else(IntoResponse::into_response, ok)
}

#[derive(Deserialize)]
struct TurnoutQuery {
    lat: Option<String>,
    lon: Option<String>,
    registered: Option<String>,
}

async fn turnout(State(s): Shared, Query(q): Query<TurnoutQuery>) -> Response {
    let num = |v: &Option<String>| v.as_deref().and_then(|x| x.parse::<f64>().ok());
    let (Some(lat), Some(lon)) = (num(&q.lat), num(&q.lon)) else {
        return ApiError::bad_request("invalid_coordinates", "lat and lon are required numbers").into_response();
    };
    let Some(registered) = q.registered.as_deref().and_then(|r| r.parse::<u64>().ok()) else {
        return ApiError::bad_request("invalid_registered", "registered must be a positive integer").into_response();
    };
    s.predict_turnout(lat, lon, registered)
        .await
        .map_or_else(IntoResponse::into_response, ok)
}

async fn violence(State(s): Shared, headers: HeaderMap) -> Response {
    s.violence_report(bearer(&headers).as_ref())
        .map_or_else(IntoResponse::into_response, |areas| ok(serde_json::json!({ "areas": areas })))
}

async fn verify_audit(State(s): Shared, headers: HeaderMap) -> Response {
    s.verify_audit(bearer(&headers).as_ref()).map_or_else(IntoResponse::into_response, ok)
}

async fn health(State(s): Shared) -> Response {
    let weather = s.gateway().healthcheck().await;
    ok(serde_json::json!({ "ok": true, "weather": weather }))
}
