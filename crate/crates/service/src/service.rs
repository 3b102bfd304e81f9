//! Transport-independent application layer: authorization, request
//! decoding, persistence and the prediction engines behind one handle.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use evote_core::audit::ChainVerdict;
use evote_core::election::{Candidate, TallySnapshot};
use evote_core::forest::{ForestParams, SplitSpec};
use evote_core::identity::{AuthDecision, BiometricCapture, BiometricKind, VoterRecord};
use evote_core::projection::{self, Projection, TurnoutCurve};
use evote_core::system::{ElectionDraft, ElectionSystem, ErrorClass, Role, SystemConfig, SystemError};
use evote_core::turnout::{self, TurnoutModel, TurnoutPrediction};
use evote_core::violence::{self, AreaHistory, RiskAssessment, TierThresholds, ViolenceModel};
use evote_core::{Digest256, Id128};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::gateway::{GatewayError, WeatherGateway};
use crate::journal::{FileJournal, JournalError, SharedJournal};

pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

/// Settable clock for tests and simulation.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(t: u64) -> Self {
        Self(AtomicU64::new(t))
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Error document `{error, message}` plus the HTTP status it maps to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    #[serde(rename = "error")]
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(400, code, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.status, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<SystemError> for ApiError {
    fn from(e: SystemError) -> Self {
        let status = match e.class() {
            ErrorClass::Validation => 400,
            ErrorClass::Unauthenticated => 401,
            ErrorClass::Forbidden => 403,
            ErrorClass::NotFound => 404,
            ErrorClass::Conflict => 409,
            ErrorClass::Internal => 500,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidCoordinates { .. } => Self::bad_request("invalid_coordinates", e.to_string()),
            GatewayError::FixtureNotFound(_) => Self::new(404, "weather_unavailable", e.to_string()),
            _ => Self::new(502, "weather_unavailable", e.to_string()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("data dir {0} is not writable: {1}")]
    DataDir(String, std::io::Error),
    #[error("{0}")]
    Models(String),
}

#[derive(Debug, Clone, Deserialize)]
pub struct EnrollRequest {
    pub nic: String,
    pub full_name: String,
    pub area_code: String,
    /// Base64 capture payloads.
    pub fingerprint: String,
    pub face: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AuthRequest {
    pub nic: String,
    pub fingerprint: String,
    pub face: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthResponse {
    pub accepted: bool,
    pub fingerprint_score: f64,
    pub face_score: f64,
    pub session_token: Option<Id128>,
    pub role: Option<Role>,
    pub expires_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrIssued {
    pub token: Id128,
    pub payload: String,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redeemed {
    pub credential: Id128,
    pub election_id: Id128,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteReceipt {
    pub receipt: Digest256,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutAnswer {
    #[serde(flatten)]
    pub prediction: TurnoutPrediction,
    pub registered_count: u64,
    pub observation: turnout::WeatherObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub hash_algorithm: String,
    #[serde(flatten)]
    pub verdict: ChainVerdict,
}

fn decode_capture(kind: BiometricKind, b64: &str, now: u64) -> Result<BiometricCapture, ApiError> {
    let payload = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::bad_request("invalid_capture", format!("capture is not base64: {e}")))?;
    Ok(BiometricCapture::new(kind, payload, now))
}

/// Parses `Authorization: Bearer <hex>`; anything unparsable counts as an unknown token.
pub fn parse_bearer(header: Option<&str>) -> Option<Id128> {
    let value = header?.trim();
    let token = value.strip_prefix("Bearer ").or_else(|| value.strip_prefix("bearer "))?;
    token.trim().parse().ok().or(Some(Id128([0; 16])))
}

/// Turnout and violence models plus the reference data they answer over.
/// Models without a configured file are trained on first use from the
/// synthetic corpora with the configured seed.
pub struct Predictors {
    seed: u64,
    turnout_path: Option<std::path::PathBuf>,
    violence_path: Option<std::path::PathBuf>,
    turnout: OnceLock<Result<TurnoutModel, String>>,
    violence: OnceLock<Result<ViolenceModel, String>>,
    pub thresholds: TierThresholds,
    pub areas: Vec<AreaHistory>,
    pub curves: BTreeMap<String, TurnoutCurve>,
}

impl Predictors {
    pub fn from_config(config: &ServiceConfig) -> Result<Self, StartupError> {
        let areas = match &config.area_history {
            Some(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| StartupError::Models(format!("{}: {e}", path.display())))?;
                csv::Reader::from_reader(file)
                    .deserialize()
                    .collect::<Result<Vec<AreaHistory>, _>>()
                    .map_err(|e| StartupError::Models(format!("{}: {e}", path.display())))?
            }
            None => Vec::new(),
        };
        let curves = match &config.attendance_history {
            Some(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| StartupError::Models(format!("{}: {e}", path.display())))?;
                let history = projection::read_history_csv(file).map_err(|e| StartupError::Models(e.to_string()))?;
                projection::build_curves_from_history(&history).map_err(|e| StartupError::Models(e.to_string()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            seed: config.seed,
            turnout_path: config.turnout_model.clone(),
            violence_path: config.violence_model.clone(),
            turnout: OnceLock::new(),
            violence: OnceLock::new(),
            thresholds: TierThresholds::default(),
            areas,
            curves,
        })
    }

    pub fn with_models(turnout: TurnoutModel, violence: ViolenceModel) -> Self {
        Self {
            seed: 0,
            turnout_path: None,
            violence_path: None,
            turnout: OnceLock::from(Ok(turnout)),
            violence: OnceLock::from(Ok(violence)),
            thresholds: TierThresholds::default(),
            areas: Vec::new(),
            curves: BTreeMap::new(),
        }
    }

    pub fn turnout(&self) -> Result<&TurnoutModel, ApiError> {
        self.turnout
            .get_or_init(|| match &self.turnout_path {
                Some(p) => std::fs::read_to_string(p)
                    .map_err(|e| e.to_string())
                    .and_then(|s| TurnoutModel::from_json(&s).map_err(|e| e.to_string())),
                None => {
                    let corpus = turnout::generate_training_data(turnout::DEFAULT_CORPUS_SIZE, self.seed);
                    let split = SplitSpec::new(0.7, 0.15, 0.15, self.seed);
                    turnout::train_turnout_model(&corpus, &split, &ForestParams::with_seed(self.seed))
                        .map(|r| r.model)
                        .map_err(|e| e.to_string())
                }
            })
            .as_ref()
            .map_err(|e| ApiError::new(500, "model_unavailable", e.clone()))
    }

    pub fn violence(&self) -> Result<&ViolenceModel, ApiError> {
        self.violence
            .get_or_init(|| match &self.violence_path {
                Some(p) => std::fs::read_to_string(p)
                    .map_err(|e| e.to_string())
                    .and_then(|s| ViolenceModel::from_json(&s).map_err(|e| e.to_string())),
                None => {
                    let corpus = violence::generate_training_data(500, self.seed);
                    let split = SplitSpec::new(0.7, 0.15, 0.15, self.seed);
                    violence::train_violence_model(&corpus, &split, &ForestParams::with_seed(self.seed))
                        .map(|r| r.model)
                        .map_err(|e| e.to_string())
                }
            })
            .as_ref()
            .map_err(|e| ApiError::new(500, "model_unavailable", e.clone()))
    }

    /// Curve for `area`, or the straight line (0,0)-(1,1) when no history is known.
    pub fn curve_for(&self, area: &str) -> TurnoutCurve {
        self.curves.get(area).cloned().unwrap_or_else(|| TurnoutCurve {
            area_code: area.to_string(),
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        })
    }
}

pub struct Service {
    system: RwLock<ElectionSystem>,
    journal: Option<SharedJournal>,
    snapshot_every: u64,
    clock: Arc<dyn Clock>,
    gateway: WeatherGateway,
    pub predictors: Predictors,
}

impl Service {
    /// Opens the data directory, replays it and grants the staff roster.
    /// `seed` fixes the identifier generator; `None` seeds from the OS.
    pub fn open(config: &ServiceConfig, clock: Arc<dyn Clock>, seed: Option<u64>) -> Result<Self, StartupError> {
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| StartupError::DataDir(config.data_dir.display().to_string(), e))?;
        let probe = config.data_dir.join(".write-probe");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| StartupError::DataDir(config.data_dir.display().to_string(), e))?;

        let (journal, recovered) = FileJournal::open(&config.data_dir)?;
        if recovered.discarded_bytes > 0 {
            log::warn!("recovered journal, dropped {} bytes", recovered.discarded_bytes);
        }
        let shared = SharedJournal::new(journal);
        let rng = match seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_os_rng(),
        };
        let system = match recovered.state {
            Some(state) => ElectionSystem::restore(state, config.system_config(), rng, Box::new(shared.clone())),
            None => ElectionSystem::new(config.system_config(), rng, Box::new(shared.clone()))?,
        };
        let service = Self {
            system: RwLock::new(system),
            journal: Some(shared),
            snapshot_every: config.snapshot_every,
            clock,
            gateway: WeatherGateway::new(config.weather.clone()),
            predictors: Predictors::from_config(config)?,
        };
        service.apply_roster(config)?;
        Ok(service)
    }

    /// Memory-only service over a seeded system.
    pub fn in_memory(config: &ServiceConfig, clock: Arc<dyn Clock>, seed: u64, predictors: Predictors) -> Self {
        let service = Self {
            system: RwLock::new(ElectionSystem::in_memory(config.system_config(), seed)),
            journal: None,
            snapshot_every: config.snapshot_every,
            clock,
            gateway: WeatherGateway::new(config.weather.clone()),
            predictors,
        };
        service.apply_roster(config).expect("memory sink never fails");
        service
    }

    fn apply_roster(&self, config: &ServiceConfig) -> Result<(), SystemError> {
        let mut sys = self.write();
        for entry in &config.staff {
            if sys.state().role_of(&entry.nic) != entry.role {
                sys.grant_role(&entry.nic, entry.role)?;
            }
        }
        Ok(())
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn gateway(&self) -> &WeatherGateway {
        &self.gateway
    }

    pub fn read(&self) -> RwLockReadGuard<'_, ElectionSystem> {
        self.system.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, ElectionSystem> {
        self.system.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs a mutating operation under the writer lock, then snapshots if due.
    fn mutate<T>(&self, op: impl FnOnce(&mut ElectionSystem, u64) -> Result<T, SystemError>) -> Result<T, ApiError> {
        let mut sys = self.write();
        let out = op(&mut sys, self.now())?;
        if let Some(journal) = &self.journal {
            let mut j = journal.lock();
            if j.batches_since_snapshot() >= self.snapshot_every {
                if let Err(e) = j.write_snapshot(sys.state()) {
                    log::error!("snapshot failed: {e}");
                }
            }
        }
        Ok(out)
    }

    pub fn write_snapshot(&self) -> Result<(), JournalError> {
        let sys = self.write();
        match &self.journal {
            Some(j) => j.lock().write_snapshot(sys.state()),
            None => Ok(()),
        }
    }

    /// Nic and role behind the bearer token, if it passes `required`.
    pub fn require(&self, token: Option<&Id128>, required: Role) -> Result<(String, Role), ApiError> {
        let d = self.read().authorize(token, required, self.now());
        if d.allowed {
            return Ok((d.nic.unwrap_or_default(), d.role.unwrap_or(Role::Voter)));
        }
        let reason = d.reason.unwrap_or_default();
        if reason == "insufficient_role" {
            Err(ApiError::new(403, "forbidden", format!("requires {required:?} role")))
        } else {
            Err(ApiError::new(401, "unauthenticated", format!("session token {reason}")))
        }
    }

    pub fn enroll(&self, token: Option<&Id128>, req: &EnrollRequest) -> Result<VoterRecord, ApiError> {
        let (officer, _) = self.require(token, Role::Officer)?;
        let now = self.now();
        let fp = decode_capture(BiometricKind::Fingerprint, &req.fingerprint, now)?;
        let face = decode_capture(BiometricKind::Face, &req.face, now)?;
        self.mutate(|sys, now| sys.enroll(&req.nic, &req.full_name, &req.area_code, &fp, &face, &officer, now))
    }

    /// Operator path used by `enroll-batch`; no session required.
    pub fn enroll_as_operator(&self, req: &EnrollRequest, operator: &str) -> Result<VoterRecord, ApiError> {
        let now = self.now();
        let fp = decode_capture(BiometricKind::Fingerprint, &req.fingerprint, now)?;
        let face = decode_capture(BiometricKind::Face, &req.face, now)?;
        self.mutate(|sys, now| sys.enroll(&req.nic, &req.full_name, &req.area_code, &fp, &face, operator, now))
    }

    pub fn authenticate(&self, req: &AuthRequest) -> Result<AuthResponse, ApiError> {
        let now = self.now();
        let fp = decode_capture(BiometricKind::Fingerprint, &req.fingerprint, now)?;
        let face = decode_capture(BiometricKind::Face, &req.face, now)?;
        let decision: AuthDecision = self.mutate(|sys, now| sys.authenticate(&req.nic, &fp, &face, now))?;
        let session = decision.session_token.and_then(|t| self.read().session(&t).cloned());
        Ok(AuthResponse {
            accepted: decision.accepted,
            fingerprint_score: decision.fingerprint_score,
            face_score: decision.face_score,
            session_token: decision.session_token,
            role: session.as_ref().map(|s| s.role),
            expires_at: session.map(|s| s.expires_at),
        })
    }

    pub fn create_election(&self, token: Option<&Id128>, draft: ElectionDraft) -> Result<evote_core::election::Election, ApiError> {
        let (_, role) = self.require(token, Role::Admin)?;
        self.mutate(|sys, now| sys.create_election(draft, role, now))
    }

    pub fn open_election(&self, token: Option<&Id128>, id: &Id128) -> Result<evote_core::election::Election, ApiError> {
        let (_, role) = self.require(token, Role::Admin)?;
        self.mutate(|sys, _| sys.open_election(id, role))
    }

    pub fn close_election(&self, token: Option<&Id128>, id: &Id128) -> Result<evote_core::election::Election, ApiError> {
        let (_, role) = self.require(token, Role::Admin)?;
        self.mutate(|sys, now| sys.close_election(id, role, now))
    }

    pub fn issue_qr(&self, token: Option<&Id128>, id: &Id128, voter_nic: &str) -> Result<QrIssued, ApiError> {
        self.require(token, Role::Officer)?;
        let t = self.mutate(|sys, now| sys.issue_qr_token(voter_nic, id, now))?;
        Ok(QrIssued {
            token: t.token,
            payload: t.payload(),
            expires_at: t.expires_at,
        })
    }

    pub fn redeem_qr(&self, payload: &str) -> Result<Redeemed, ApiError> {
        let c = self.mutate(|sys, now| sys.redeem_qr_payload(payload, now))?;
        Ok(Redeemed {
            credential: c.value,
            election_id: c.election_id,
            expires_at: c.expires_at,
        })
    }

    pub fn cast_vote(&self, credential: Option<&Id128>, id: &Id128, candidate_id: &str) -> Result<VoteReceipt, ApiError> {
        let credential = credential.ok_or_else(|| ApiError::new(401, "unauthenticated", "missing credential"))?;
        let receipt = self.mutate(|sys, now| sys.cast_vote(credential, id, candidate_id, now))?;
        Ok(VoteReceipt { receipt })
    }

    pub fn tally(&self, id: &Id128) -> Result<TallySnapshot, ApiError> {
        Ok(self.read().tally(id, self.now())?)
    }

    /// Projection at time fraction `t`, published with counts rounded to one decimal.
    pub fn projection(&self, id: &Id128, t: f64) -> Result<Projection, ApiError> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(ApiError::bad_request("invalid_time_fraction", "t must be in (0,1]"));
        }
        let (tally, election) = {
            let sys = self.read();
            (sys.tally(id, self.now())?, sys.election(id)?.clone())
        };
        let curves: BTreeMap<String, TurnoutCurve> = election
            .area_codes
            .iter()
            .map(|a| (a.clone(), self.predictors.curve_for(a)))
            .collect();
        let order: Vec<String> = election.candidates.iter().map(|c: &Candidate| c.candidate_id.clone()).collect();
        projection::project(&tally, &curves, t, &order)
            .map(|p| p.rounded())
            .map_err(|e| match e {
                projection::ProjectionError::EmptyTally => ApiError::new(409, "empty_tally", e.to_string()),
                _ => ApiError::bad_request("projection_failed", e.to_string()),
            })
    }

    pub async fn predict_turnout(&self, lat: f64, lon: f64, registered: u64) -> Result<TurnoutAnswer, ApiError> {
        evote_core::weather::check_coordinates(lat, lon)
            .map_err(|e| ApiError::bad_request("invalid_coordinates", e.to_string()))?;
        if registered == 0 {
            return Err(ApiError::bad_request("invalid_registered", "registered must be at least 1"));
        }
        let obs = self.gateway.fetch_current(lat, lon, self.now()).await?;
        let model = self.predictors.turnout()?;
        let prediction = turnout::predict_turnout(model, &obs, registered)
            .map_err(|e| ApiError::bad_request("invalid_observation", e.to_string()))?;
        Ok(TurnoutAnswer {
            prediction,
            registered_count: registered,
            observation: obs,
        })
    }

    pub fn violence_report(&self, token: Option<&Id128>) -> Result<Vec<RiskAssessment>, ApiError> {
        self.require(token, Role::Admin)?;
        let model = self.predictors.violence()?;
        violence::rank_areas(model, &self.predictors.areas, &self.predictors.thresholds).map_err(|e| match e {
            violence::ViolenceError::EmptyList => ApiError::new(404, "no_area_history", "no area history configured"),
            other => ApiError::bad_request("invalid_area_history", other.to_string()),
        })
    }

    pub fn verify_audit(&self, token: Option<&Id128>) -> Result<AuditReport, ApiError> {
        self.require(token, Role::Admin)?;
        let sys = self.read();
        Ok(AuditReport {
            hash_algorithm: sys.state().hash_algorithm.clone(),
            verdict: sys.verify_audit(),
        })
    }

    pub fn system_config(&self) -> SystemConfig {
        self.read().config().clone()
    }
}
