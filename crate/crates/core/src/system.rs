//! The election state machine.
//!
//! Every mutating operation validates against the current [`State`], builds
//! the list of [`Event`]s it implies (including exactly one audit entry),
//! hands them to the [`EventSink`] and only then applies them. A sink failure
//! therefore leaves the state untouched, and replaying the same events over an
//! empty state rebuilds it exactly.
//!
//! Callers serialize access with `&mut self`; wrapping the system in a lock
//! makes `cast_vote` and `redeem_qr_token` linearizable check-and-set steps.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditEventType, AuditLog, ChainVerdict, HASH_ALGORITHM};
use crate::crypto::{digest_json, sha256, Digest256, Id128};
use crate::election::{
    check_eligibility, parse_qr_payload, tally_ballots, truncate_to_minute, Ballot, Candidate,
    Channel, Election, ElectionStatus, QrToken, TallySnapshot, VotedMarker,
};
use crate::identity::{
    build_record, match_captures, AuthDecision, BiometricCapture, IdentityError, VoterRecord,
    DEFAULT_MATCH_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Voter,
    Officer,
    Admin,
    SuperAdmin,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "voter" => Ok(Role::Voter),
            "officer" => Ok(Role::Officer),
            "admin" => Ok(Role::Admin),
            "super_admin" => Ok(Role::SuperAdmin),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: Id128,
    pub nic: String,
    pub role: Role,
    pub expires_at: u64,
}

/// Single-use voting credential obtained by redeeming a QR token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCredential {
    pub value: Id128,
    pub voter_nic: String,
    pub election_id: Id128,
    pub expires_at: u64,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub match_threshold: f64,
    pub session_ttl_secs: u64,
    pub qr_ttl_secs: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            session_ttl_secs: 15 * 60,
            qr_ttl_secs: 10 * 60,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("actor role is not allowed to perform this action")]
    Unauthorized,
    #[error("an election needs at least two candidates")]
    TooFewCandidates,
    #[error("candidate id {0:?} appears more than once")]
    DuplicateCandidate(String),
    #[error("an election needs at least one area code")]
    NoAreas,
    #[error("opening time must precede closing time")]
    InvalidWindow,
    #[error("unknown election {0}")]
    UnknownElection(Id128),
    #[error("voter is not eligible for this election")]
    NotEligible,
    #[error("election is not accepting votes")]
    ElectionNotOpen,
    #[error("election is not open")]
    NotOpen,
    #[error("election is not in draft status")]
    NotDraft,
    #[error("unknown QR token")]
    UnknownToken,
    #[error("QR token has expired")]
    ExpiredToken,
    #[error("QR token was already redeemed")]
    AlreadyConsumed,
    #[error("QR token was superseded by a newer one")]
    StaleToken,
    #[error("voter has already voted in this election")]
    AlreadyVoted,
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("credential is missing, expired or not valid for this election")]
    InvalidCredential,
    #[error("storage failure: {0}")]
    Storage(String),
}

/// Broad failure class, used to pick transport status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Unauthenticated,
    Forbidden,
    NotFound,
    Conflict,
    Internal,
}

impl SystemError {
    pub fn code(&self) -> &'static str {
        match self {
            SystemError::Identity(e) => match e {
                IdentityError::EmptyCapture => "empty_capture",
                IdentityError::CaptureTooLarge(_) => "capture_too_large",
                IdentityError::KindMismatch { .. } => "kind_mismatch",
                IdentityError::InvalidNicFormat(_) => "invalid_nic_format",
                IdentityError::DuplicateNic(_) => "duplicate_nic",
                IdentityError::UnknownNic(_) => "unknown_nic",
                IdentityError::MissingField(_) => "missing_field",
            },
            SystemError::Unauthorized => "unauthorized",
            SystemError::TooFewCandidates => "too_few_candidates",
            SystemError::DuplicateCandidate(_) => "duplicate_candidate",
            SystemError::NoAreas => "no_areas",
            SystemError::InvalidWindow => "invalid_window",
            SystemError::UnknownElection(_) => "unknown_election",
            SystemError::NotEligible => "not_eligible",
            SystemError::ElectionNotOpen => "election_not_open",
            SystemError::NotOpen => "not_open",
            SystemError::NotDraft => "not_draft",
            SystemError::UnknownToken => "unknown_token",
            SystemError::ExpiredToken => "expired_token",
            SystemError::AlreadyConsumed => "already_consumed",
            SystemError::StaleToken => "stale_token",
            SystemError::AlreadyVoted => "already_voted",
            SystemError::UnknownCandidate(_) => "unknown_candidate",
            SystemError::InvalidCredential => "invalid_credential",
            SystemError::Storage(_) => "storage",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use SystemError::*;
        match self {
            Identity(IdentityError::UnknownNic(_)) | UnknownElection(_) | UnknownToken => {
                ErrorClass::NotFound
            }
            Identity(IdentityError::DuplicateNic(_)) | AlreadyVoted | AlreadyConsumed
            | StaleToken | NotOpen | NotDraft => ErrorClass::Conflict,
            Identity(_) | TooFewCandidates | DuplicateCandidate(_) | NoAreas | InvalidWindow
            | UnknownCandidate(_) | ElectionNotOpen | ExpiredToken => ErrorClass::Validation,
            InvalidCredential => ErrorClass::Unauthenticated,
            Unauthorized | NotEligible => ErrorClass::Forbidden,
            Storage(_) => ErrorClass::Internal,
        }
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct SinkError(pub String);

/// Durable destination for committed events.
pub trait EventSink: Send + Sync {
    fn record(&mut self, events: &[Event]) -> Result<(), SinkError>;
}

/// Sink that keeps nothing; state lives only in memory.
#[derive(Debug, Default)]
pub struct MemorySink;

impl EventSink for MemorySink {
    fn record(&mut self, _events: &[Event]) -> Result<(), SinkError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Initialized {
        hash_algorithm: String,
        receipt_salt: Digest256,
    },
    VoterEnrolled {
        record: VoterRecord,
    },
    RoleGranted {
        nic: String,
        role: Role,
    },
    SessionOpened {
        session: Session,
    },
    ElectionCreated {
        election: Election,
    },
    ElectionStatusChanged {
        election_id: Id128,
        status: ElectionStatus,
    },
    TokenIssued {
        token: QrToken,
    },
    TokenRedeemed {
        token: Id128,
        credential: VoteCredential,
    },
    VoteRecorded {
        marker: VotedMarker,
        ballot: Ballot,
        credential: Id128,
    },
    AuditAppended {
        entry: AuditEntry,
    },
}

fn pair_key(election_id: &Id128, nic: &str) -> String {
    format!("{election_id}/{nic}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub hash_algorithm: String,
    pub receipt_salt: Digest256,
    pub voters: BTreeMap<String, VoterRecord>,
    pub roles: BTreeMap<String, Role>,
    pub sessions: BTreeMap<Id128, Session>,
    pub elections: BTreeMap<Id128, Election>,
    pub tokens: BTreeMap<Id128, QrToken>,
    /// `election/nic` -> the only token that may still be redeemed.
    pub active_tokens: BTreeMap<String, Id128>,
    pub credentials: BTreeMap<Id128, VoteCredential>,
    /// `election/nic` -> participation marker.
    pub markers: BTreeMap<String, VotedMarker>,
    pub ballots: Vec<Ballot>,
    pub audit: AuditLog,
}

impl State {
    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::Initialized {
                hash_algorithm,
                receipt_salt,
            } => {
                self.hash_algorithm = hash_algorithm.clone();
                self.receipt_salt = *receipt_salt;
            }
            Event::VoterEnrolled { record } => {
                self.voters.insert(record.nic.clone(), record.clone());
            }
            Event::RoleGranted { nic, role } => {
                self.roles.insert(nic.clone(), *role);
            }
            Event::SessionOpened { session } => {
                self.sessions.insert(session.token, session.clone());
            }
            Event::ElectionCreated { election } => {
                self.elections.insert(election.election_id, election.clone());
            }
            Event::ElectionStatusChanged {
                election_id,
                status,
            } => {
                if let Some(e) = self.elections.get_mut(election_id) {
                    e.status = *status;
                }
            }
            Event::TokenIssued { token } => {
                self.active_tokens
                    .insert(pair_key(&token.election_id, &token.voter_nic), token.token);
                self.tokens.insert(token.token, token.clone());
            }
            Event::TokenRedeemed { token, credential } => {
                if let Some(t) = self.tokens.get_mut(token) {
                    t.consumed = true;
                }
                self.credentials.insert(credential.value, credential.clone());
            }
            Event::VoteRecorded {
                marker,
                ballot,
                credential,
            } => {
                self.markers.insert(
                    pair_key(&marker.election_id, &marker.voter_nic),
                    marker.clone(),
                );
                self.ballots.push(ballot.clone());
                if let Some(c) = self.credentials.get_mut(credential) {
                    c.used = true;
                }
            }
            Event::AuditAppended { entry } => self.audit.push(*entry),
        }
    }

    pub fn has_voted(&self, election_id: &Id128, nic: &str) -> bool {
        self.markers.contains_key(&pair_key(election_id, nic))
    }

    pub fn role_of(&self, nic: &str) -> Role {
        self.roles.get(nic).copied().unwrap_or(Role::Voter)
    }
}

/// Outcome of a role check; never an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthzDecision {
    pub allowed: bool,
    pub role: Option<Role>,
    pub nic: Option<String>,
    pub reason: Option<String>,
}

impl AuthzDecision {
    fn deny(reason: &str, session: Option<&Session>) -> Self {
        Self {
            allowed: false,
            role: session.map(|s| s.role),
            nic: session.map(|s| s.nic.clone()),
            reason: Some(reason.to_string()),
        }
    }
}

/// Input for [`ElectionSystem::create_election`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionDraft {
    pub name: String,
    pub area_codes: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub opens_at: u64,
    pub closes_at: u64,
}

pub struct ElectionSystem {
    state: State,
    config: SystemConfig,
    rng: ChaCha20Rng,
    sink: Box<dyn EventSink>,
}

impl std::fmt::Debug for ElectionSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ElectionSystem")
            .field("voters", &self.state.voters.len())
            .field("elections", &self.state.elections.len())
            .field("ballots", &self.state.ballots.len())
            .field("audit_entries", &self.state.audit.len())
            .finish()
    }
}

impl ElectionSystem {
    /// Fresh system; commits the initialization event (receipt salt).
    pub fn new(
        config: SystemConfig,
        mut rng: ChaCha20Rng,
        sink: Box<dyn EventSink>,
    ) -> Result<Self, SystemError> {
        let mut salt = [0u8; 32];
        rand::RngCore::fill_bytes(&mut rng, &mut salt);
        let mut system = Self {
            state: State::default(),
            config,
            rng,
            sink,
        };
        system.commit(vec![Event::Initialized {
            hash_algorithm: HASH_ALGORITHM.to_string(),
            receipt_salt: Digest256(salt),
        }])?;
        Ok(system)
    }

    /// Resumes from replayed state.
    pub fn restore(
        state: State,
        config: SystemConfig,
        rng: ChaCha20Rng,
        sink: Box<dyn EventSink>,
    ) -> Self {
        Self {
            state,
            config,
            rng,
            sink,
        }
    }

    /// Memory-only system with a seeded generator, for tests and simulation.
    pub fn in_memory(config: SystemConfig, seed: u64) -> Self {
        Self::new(config, ChaCha20Rng::seed_from_u64(seed), Box::new(MemorySink))
            .expect("memory sink never fails")
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    fn commit(&mut self, events: Vec<Event>) -> Result<(), SystemError> {
        self.sink
            .record(&events)
            .map_err(|e| SystemError::Storage(e.0))?;
        for event in &events {
            self.state.apply(event);
        }
        Ok(())
    }

    fn audit(&self, event_type: AuditEventType, payload: Digest256, now: u64) -> Event {
        Event::AuditAppended {
            entry: self.state.audit.prepare(event_type, payload, now),
        }
    }

    pub fn grant_role(&mut self, nic: &str, role: Role) -> Result<(), SystemError> {
        self.commit(vec![Event::RoleGranted {
            nic: nic.to_string(),
            role,
        }])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn enroll(
        &mut self,
        nic: &str,
        full_name: &str,
        area_code: &str,
        fp_capture: &BiometricCapture,
        face_capture: &BiometricCapture,
        officer: &str,
        now: u64,
    ) -> Result<VoterRecord, SystemError> {
        let record = build_record(nic, full_name, area_code, fp_capture, face_capture, officer, now)?;
        if self.state.voters.contains_key(nic) {
            return Err(IdentityError::DuplicateNic(nic.to_string()).into());
        }
        let audit = self.audit(AuditEventType::VoterEnrolled, digest_json(&record), now);
        self.commit(vec![
            Event::VoterEnrolled {
                record: record.clone(),
            },
            audit,
        ])?;
        Ok(record)
    }

    pub fn voter(&self, nic: &str) -> Option<&VoterRecord> {
        self.state.voters.get(nic)
    }

    pub fn authenticate(
        &mut self,
        nic: &str,
        fp_capture: &BiometricCapture,
        face_capture: &BiometricCapture,
        now: u64,
    ) -> Result<AuthDecision, SystemError> {
        let record = self
            .state
            .voters
            .get(nic)
            .ok_or_else(|| IdentityError::UnknownNic(nic.to_string()))?;
        let (fingerprint_score, face_score, accepted) =
            match_captures(record, fp_capture, face_capture, self.config.match_threshold)?;
        let mut events = Vec::new();
        let session_token = if accepted {
            let session = Session {
                token: Id128::random(&mut self.rng),
                nic: nic.to_string(),
                role: self.state.role_of(nic),
                expires_at: now + self.config.session_ttl_secs,
            };
            let token = session.token;
            events.push(Event::SessionOpened { session });
            Some(token)
        } else {
            None
        };
        let payload = digest_json(&serde_json::json!({
            "nic": nic,
            "accepted": accepted,
            "fingerprint_score": fingerprint_score,
            "face_score": face_score,
            "at": now,
        }));
        events.push(self.audit(AuditEventType::AuthAttempt, payload, now));
        self.commit(events)?;
        Ok(AuthDecision {
            accepted,
            fingerprint_score,
            face_score,
            session_token,
        })
    }

    pub fn session(&self, token: &Id128) -> Option<&Session> {
        self.state.sessions.get(token)
    }

    /// Allows iff the token names a live session whose role is at least
    /// `required` (voter < officer < admin < super_admin).
    pub fn authorize(&self, token: Option<&Id128>, required: Role, now: u64) -> AuthzDecision {
        let Some(token) = token else {
            return AuthzDecision::deny("missing", None);
        };
        let Some(session) = self.state.sessions.get(token) else {
            return AuthzDecision::deny("unknown", None);
        };
        if now >= session.expires_at {
            return AuthzDecision::deny("expired", Some(session));
        }
        if session.role < required {
            return AuthzDecision::deny("insufficient_role", Some(session));
        }
        AuthzDecision {
            allowed: true,
            role: Some(session.role),
            nic: Some(session.nic.clone()),
            reason: None,
        }
    }

    pub fn create_election(
        &mut self,
        draft: ElectionDraft,
        actor: Role,
        now: u64,
    ) -> Result<Election, SystemError> {
        if actor < Role::Admin {
            return Err(SystemError::Unauthorized);
        }
        if draft.candidates.len() < 2 {
            return Err(SystemError::TooFewCandidates);
        }
        let mut seen = BTreeSet::new();
        for c in &draft.candidates {
            if !seen.insert(c.candidate_id.as_str()) {
                return Err(SystemError::DuplicateCandidate(c.candidate_id.clone()));
            }
        }
        let area_codes: BTreeSet<String> = draft
            .area_codes
            .into_iter()
            .filter(|a| !a.trim().is_empty())
            .collect();
        if area_codes.is_empty() {
            return Err(SystemError::NoAreas);
        }
        if draft.opens_at >= draft.closes_at {
            return Err(SystemError::InvalidWindow);
        }
        let election = Election {
            election_id: Id128::random(&mut self.rng),
            name: draft.name,
            area_codes,
            candidates: draft.candidates,
            opens_at: draft.opens_at,
            closes_at: draft.closes_at,
            status: ElectionStatus::Draft,
        };
        let audit = self.audit(AuditEventType::ElectionCreated, digest_json(&election), now);
        self.commit(vec![
            Event::ElectionCreated {
                election: election.clone(),
            },
            audit,
        ])?;
        Ok(election)
    }

    pub fn election(&self, election_id: &Id128) -> Result<&Election, SystemError> {
        self.state
            .elections
            .get(election_id)
            .ok_or(SystemError::UnknownElection(*election_id))
    }

    /// Draft -> open. The audit event set has no "opened" type, so opening is
    /// journaled but not chained.
    pub fn open_election(&mut self, election_id: &Id128, actor: Role) -> Result<Election, SystemError> {
        if actor < Role::Admin {
            return Err(SystemError::Unauthorized);
        }
        let election = self.election(election_id)?;
        if election.status != ElectionStatus::Draft {
            return Err(SystemError::NotDraft);
        }
        self.commit(vec![Event::ElectionStatusChanged {
            election_id: *election_id,
            status: ElectionStatus::Open,
        }])?;
        Ok(self.state.elections[election_id].clone())
    }

    pub fn close_election(
        &mut self,
        election_id: &Id128,
        actor: Role,
        now: u64,
    ) -> Result<Election, SystemError> {
        if actor < Role::Admin {
            return Err(SystemError::Unauthorized);
        }
        let election = self.election(election_id)?;
        if election.status != ElectionStatus::Open {
            return Err(SystemError::NotOpen);
        }
        let payload = digest_json(&serde_json::json!({
            "election_id": election_id,
            "closed_at": now,
        }));
        let audit = self.audit(AuditEventType::ElectionClosed, payload, now);
        self.commit(vec![
            Event::ElectionStatusChanged {
                election_id: *election_id,
                status: ElectionStatus::Closed,
            },
            audit,
        ])?;
        Ok(self.state.elections[election_id].clone())
    }

    pub fn check_eligibility(&self, voter: &VoterRecord, election: &Election) -> bool {
        check_eligibility(
            voter,
            election,
            self.state.has_voted(&election.election_id, &voter.nic),
        )
    }

    pub fn issue_qr_token(
        &mut self,
        voter_nic: &str,
        election_id: &Id128,
        now: u64,
    ) -> Result<QrToken, SystemError> {
        let election = self.election(election_id)?;
        if !election.is_open_at(now) {
            return Err(SystemError::ElectionNotOpen);
        }
        let voter = self
            .voter(voter_nic)
            .ok_or_else(|| IdentityError::UnknownNic(voter_nic.to_string()))?;
        if !self.check_eligibility(voter, election) {
            return Err(SystemError::NotEligible);
        }
        let token = QrToken {
            token: Id128::random(&mut self.rng),
            election_id: *election_id,
            voter_nic: voter_nic.to_string(),
            issued_at: now,
            expires_at: now + self.config.qr_ttl_secs,
            consumed: false,
        };
        let audit = self.audit(AuditEventType::TokenIssued, digest_json(&token), now);
        self.commit(vec![
            Event::TokenIssued {
                token: token.clone(),
            },
            audit,
        ])?;
        Ok(token)
    }

    pub fn redeem_qr_token(&mut self, token: &Id128, now: u64) -> Result<VoteCredential, SystemError> {
        let record = self.state.tokens.get(token).ok_or(SystemError::UnknownToken)?;
        if record.consumed {
            return Err(SystemError::AlreadyConsumed);
        }
        let active = self
            .state
            .active_tokens
            .get(&pair_key(&record.election_id, &record.voter_nic));
        if active != Some(token) {
            return Err(SystemError::StaleToken);
        }
        if now >= record.expires_at {
            return Err(SystemError::ExpiredToken);
        }
        let credential = VoteCredential {
            value: Id128::random(&mut self.rng),
            voter_nic: record.voter_nic.clone(),
            election_id: record.election_id,
            expires_at: now + self.config.qr_ttl_secs,
            used: false,
        };
        let payload = digest_json(&(token, &credential));
        let audit = self.audit(AuditEventType::TokenRedeemed, payload, now);
        self.commit(vec![
            Event::TokenRedeemed {
                token: *token,
                credential: credential.clone(),
            },
            audit,
        ])?;
        Ok(credential)
    }

    /// Redeems the textual QR payload `evote://v1/<election>/<token>`.
    pub fn redeem_qr_payload(&mut self, payload: &str, now: u64) -> Result<VoteCredential, SystemError> {
        let (election_id, token) = parse_qr_payload(payload).ok_or(SystemError::UnknownToken)?;
        match self.state.tokens.get(&token) {
            Some(t) if t.election_id == election_id => self.redeem_qr_token(&token, now),
            _ => Err(SystemError::UnknownToken),
        }
    }

    /// Casts one vote with either a biometric session token (station channel)
    /// or a redeemed QR credential (mobile channel). Returns the receipt.
    pub fn cast_vote(
        &mut self,
        credential: &Id128,
        election_id: &Id128,
        candidate_id: &str,
        now: u64,
    ) -> Result<Digest256, SystemError> {
        let (voter_nic, channel) = if let Some(s) = self.state.sessions.get(credential) {
            if now >= s.expires_at {
                return Err(SystemError::InvalidCredential);
            }
            (s.nic.clone(), Channel::Station)
        } else if let Some(c) = self.state.credentials.get(credential) {
            if now >= c.expires_at || c.election_id != *election_id {
                return Err(SystemError::InvalidCredential);
            }
            (c.voter_nic.clone(), Channel::Mobile)
        } else {
            return Err(SystemError::InvalidCredential);
        };
        let election = self.election(election_id)?;
        if !election.is_open_at(now) {
            return Err(SystemError::ElectionNotOpen);
        }
        let voter = self
            .voter(&voter_nic)
            .ok_or_else(|| IdentityError::UnknownNic(voter_nic.clone()))?;
        if !election.area_codes.contains(&voter.area_code) {
            return Err(SystemError::NotEligible);
        }
        if !election.has_candidate(candidate_id) {
            return Err(SystemError::UnknownCandidate(candidate_id.to_string()));
        }
        if self.state.has_voted(election_id, &voter_nic) {
            return Err(SystemError::AlreadyVoted);
        }
        if self.state.credentials.get(credential).is_some_and(|c| c.used) {
            return Err(SystemError::InvalidCredential);
        }
        let area_code = voter.area_code.clone();
        let ballot_id = Id128::random(&mut self.rng);
        let receipt = sha256(&[&ballot_id.0, &self.state.receipt_salt.0]);
        let ballot = Ballot {
            ballot_id,
            election_id: *election_id,
            candidate_id: candidate_id.to_string(),
            area_code,
            cast_minute: truncate_to_minute(now),
            channel,
            receipt,
        };
        let marker = VotedMarker {
            voter_nic,
            election_id: *election_id,
            channel,
            marked_at: now,
        };
        let audit = self.audit(AuditEventType::VoteCast, digest_json(&ballot), now);
        self.commit(vec![
            Event::VoteRecorded {
                marker,
                ballot,
                credential: *credential,
            },
            audit,
        ])?;
        Ok(receipt)
    }

    pub fn tally(&self, election_id: &Id128, as_of: u64) -> Result<TallySnapshot, SystemError> {
        let election = self.election(election_id)?;
        Ok(tally_ballots(election, &self.state.ballots, as_of))
    }

    pub fn ballot_count(&self, election_id: &Id128) -> usize {
        self.state
            .ballots
            .iter()
            .filter(|b| b.election_id == *election_id)
            .count()
    }

    pub fn marker_count(&self, election_id: &Id128) -> usize {
        self.state
            .markers
            .values()
            .filter(|m| m.election_id == *election_id)
            .count()
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.state.audit
    }

    pub fn verify_audit(&self) -> ChainVerdict {
        self.state.audit.verify()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::BiometricKind;

    const T0: u64 = 1_700_000_000;

    fn fp(tag: &str) -> BiometricCapture {
        BiometricCapture::new(BiometricKind::Fingerprint, format!("fp:{tag}").into_bytes(), T0)
    }

    fn face(tag: &str) -> BiometricCapture {
        BiometricCapture::new(BiometricKind::Face, format!("face:{tag}").into_bytes(), T0)
    }

    fn draft(areas: &[&str]) -> ElectionDraft {
        ElectionDraft {
            name: "Local council".into(),
            area_codes: areas.iter().map(|s| s.to_string()).collect(),
            candidates: vec![Candidate::new("A", "Alpha"), Candidate::new("B", "Beta")],
            opens_at: T0,
            closes_at: T0 + 36_000,
        }
    }

    /// System with one open election over COL-05/COL-06 and one enrolled voter.
    fn fixture() -> (ElectionSystem, Id128) {
        let mut sys = ElectionSystem::in_memory(SystemConfig::default(), 1);
        sys.enroll("901234567V", "Voter One", "COL-05", &fp("1"), &face("1"), "off-1", T0)
            .unwrap();
        let e = sys.create_election(draft(&["COL-05", "COL-06"]), Role::Admin, T0).unwrap();
        sys.open_election(&e.election_id, Role::Admin).unwrap();
        (sys, e.election_id)
    }

    fn login(sys: &mut ElectionSystem, nic: &str, tag: &str) -> Id128 {
        sys.authenticate(nic, &fp(tag), &face(tag), T0 + 10)
            .unwrap()
            .session_token
            .unwrap()
    }

    #[test]
    fn enroll_and_duplicate() {
        let (mut sys, _) = fixture();
        let rec = sys.voter("901234567V").unwrap();
        assert_eq!(rec.area_code, "COL-05");
        let err = sys
            .enroll("901234567V", "Again", "COL-05", &fp("2"), &face("2"), "off-1", T0)
            .unwrap_err();
        assert_eq!(err, SystemError::Identity(IdentityError::DuplicateNic("901234567V".into())));
        let err = sys.enroll("abc", "X", "COL-05", &fp("2"), &face("2"), "o", T0).unwrap_err();
        assert_eq!(err.code(), "invalid_nic_format");
    }

    #[test]
    fn authentication_outcomes_are_audited() {
        let (mut sys, _) = fixture();
        let before = sys.audit_log().len();
        let ok = sys.authenticate("901234567V", &fp("1"), &face("1"), T0).unwrap();
        assert!(ok.accepted);
        assert_eq!((ok.fingerprint_score, ok.face_score), (1.0, 1.0));
        assert!(ok.session_token.is_some());
        let bad = sys.authenticate("901234567V", &fp("other"), &face("1"), T0).unwrap();
        assert!(!bad.accepted);
        assert!(bad.session_token.is_none());
        assert_eq!(sys.audit_log().len(), before + 2);
        assert_eq!(
            sys.authenticate("111111111V", &fp("1"), &face("1"), T0).unwrap_err().code(),
            "unknown_nic"
        );
        assert_eq!(
            sys.authenticate("901234567V", &BiometricCapture::new(BiometricKind::Fingerprint, vec![], 0), &face("1"), T0)
                .unwrap_err()
                .code(),
            "empty_capture"
        );
    }

    #[test]
    fn election_creation_rules() {
        let mut sys = ElectionSystem::in_memory(SystemConfig::default(), 2);
        let e = sys.create_election(draft(&["COL-05"]), Role::Admin, T0).unwrap();
        assert_eq!(e.status, ElectionStatus::Draft);
        assert_eq!(
            sys.create_election(draft(&["COL-05"]), Role::Voter, T0),
            Err(SystemError::Unauthorized)
        );
        assert_eq!(
            sys.create_election(draft(&["COL-05"]), Role::Officer, T0),
            Err(SystemError::Unauthorized)
        );
        let mut one = draft(&["COL-05"]);
        one.candidates.truncate(1);
        assert_eq!(sys.create_election(one, Role::SuperAdmin, T0), Err(SystemError::TooFewCandidates));
        let mut window = draft(&["COL-05"]);
        window.closes_at = window.opens_at;
        assert_eq!(sys.create_election(window, Role::Admin, T0), Err(SystemError::InvalidWindow));
        assert_eq!(sys.create_election(draft(&[]), Role::Admin, T0), Err(SystemError::NoAreas));
        let mut dup = draft(&["COL-05"]);
        dup.candidates.push(Candidate::new("A", "Again"));
        assert_eq!(
            sys.create_election(dup, Role::Admin, T0),
            Err(SystemError::DuplicateCandidate("A".into()))
        );
    }

    #[test]
    fn eligibility_follows_area_and_participation() {
        let (mut sys, eid) = fixture();
        sys.enroll("800000001V", "Kandy", "KAN-01", &fp("k"), &face("k"), "o", T0).unwrap();
        let election = sys.election(&eid).unwrap().clone();
        assert!(sys.check_eligibility(sys.voter("901234567V").unwrap(), &election));
        assert!(!sys.check_eligibility(sys.voter("800000001V").unwrap(), &election));
        let s = login(&mut sys, "901234567V", "1");
        sys.cast_vote(&s, &eid, "A", T0 + 20).unwrap();
        assert!(!sys.check_eligibility(sys.voter("901234567V").unwrap(), &election));
        let k = login(&mut sys, "800000001V", "k");
        assert_eq!(sys.cast_vote(&k, &eid, "A", T0 + 20), Err(SystemError::NotEligible));
        assert_eq!(sys.issue_qr_token("800000001V", &eid, T0 + 20), Err(SystemError::NotEligible));
    }

    #[test]
    fn qr_token_lifecycle() {
        let (mut sys, eid) = fixture();
        let t1 = sys.issue_qr_token("901234567V", &eid, T0 + 5).unwrap();
        assert!(!t1.consumed);
        let t2 = sys.issue_qr_token("901234567V", &eid, T0 + 6).unwrap();
        assert_ne!(t1.token, t2.token);
        assert_eq!(sys.redeem_qr_token(&t1.token, T0 + 7), Err(SystemError::StaleToken));
        let cred = sys.redeem_qr_payload(&t2.payload(), T0 + 8).unwrap();
        assert_eq!(cred.voter_nic, "901234567V");
        assert_eq!(sys.redeem_qr_token(&t2.token, T0 + 9), Err(SystemError::AlreadyConsumed));
        assert_eq!(sys.redeem_qr_token(&Id128([9; 16]), T0), Err(SystemError::UnknownToken));

        let t3 = sys.issue_qr_token("901234567V", &eid, T0 + 10).unwrap();
        assert_eq!(
            sys.redeem_qr_token(&t3.token, T0 + 10 + 600),
            Err(SystemError::ExpiredToken)
        );
        let receipt = sys.cast_vote(&cred.value, &eid, "B", T0 + 30).unwrap();
        assert_eq!(sys.tally(&eid, T0 + 10_000).unwrap().votes_for("B"), 1);
        assert_ne!(receipt, Digest256::default());
        assert_eq!(sys.state().ballots[0].channel, Channel::Mobile);
    }

    #[test]
    fn qr_payload_with_wrong_election_is_unknown() {
        let (mut sys, eid) = fixture();
        let t = sys.issue_qr_token("901234567V", &eid, T0 + 5).unwrap();
        let forged = crate::election::qr_payload(&Id128([1; 16]), &t.token);
        assert_eq!(sys.redeem_qr_payload(&forged, T0 + 6), Err(SystemError::UnknownToken));
        assert_eq!(sys.redeem_qr_payload("garbage", T0 + 6), Err(SystemError::UnknownToken));
    }

    #[test]
    fn tokens_need_an_open_election() {
        let mut sys = ElectionSystem::in_memory(SystemConfig::default(), 3);
        sys.enroll("901234567V", "V", "COL-05", &fp("1"), &face("1"), "o", T0).unwrap();
        let e = sys.create_election(draft(&["COL-05"]), Role::Admin, T0).unwrap();
        assert_eq!(
            sys.issue_qr_token("901234567V", &e.election_id, T0 + 1),
            Err(SystemError::ElectionNotOpen)
        );
        sys.open_election(&e.election_id, Role::Admin).unwrap();
        sys.close_election(&e.election_id, Role::Admin, T0 + 2).unwrap();
        assert_eq!(
            sys.issue_qr_token("901234567V", &e.election_id, T0 + 3),
            Err(SystemError::ElectionNotOpen)
        );
    }

    #[test]
    fn double_vote_and_bad_candidate() {
        let (mut sys, eid) = fixture();
        let s = login(&mut sys, "901234567V", "1");
        assert_eq!(
            sys.cast_vote(&s, &eid, "X", T0 + 20),
            Err(SystemError::UnknownCandidate("X".into()))
        );
        assert_eq!(sys.marker_count(&eid), 0);
        sys.cast_vote(&s, &eid, "A", T0 + 20).unwrap();
        assert_eq!(sys.cast_vote(&s, &eid, "B", T0 + 21), Err(SystemError::AlreadyVoted));
        let t = sys.tally(&eid, T0 + 100).unwrap();
        assert_eq!((t.total, t.votes_for("A")), (1, 1));
        assert_eq!(sys.ballot_count(&eid), sys.marker_count(&eid));
        assert_eq!(
            sys.cast_vote(&Id128([3; 16]), &eid, "A", T0 + 20),
            Err(SystemError::InvalidCredential)
        );
    }

    #[test]
    fn closing_rules() {
        let (mut sys, eid) = fixture();
        let s = login(&mut sys, "901234567V", "1");
        assert_eq!(sys.close_election(&eid, Role::Officer, T0), Err(SystemError::Unauthorized));
        let closed = sys.close_election(&eid, Role::Admin, T0 + 50).unwrap();
        assert_eq!(closed.status, ElectionStatus::Closed);
        assert_eq!(sys.cast_vote(&s, &eid, "A", T0 + 60), Err(SystemError::ElectionNotOpen));
        assert_eq!(sys.close_election(&eid, Role::Admin, T0 + 70), Err(SystemError::NotOpen));
    }

    #[test]
    fn ballots_carry_no_voter_identity() {
        let (mut sys, eid) = fixture();
        let s = login(&mut sys, "901234567V", "1");
        sys.cast_vote(&s, &eid, "A", T0 + 20).unwrap();
        let record = sys.voter("901234567V").unwrap().clone();
        let ballot_json = serde_json::to_string(&sys.state().ballots[0]).unwrap();
        assert!(!ballot_json.contains("901234567V"));
        assert!(!ballot_json.contains(&record.composite_id.to_string()));
        assert!(!ballot_json.contains(&s.to_hex()));
    }

    #[test]
    fn authorization_ordering() {
        let (mut sys, _) = fixture();
        sys.enroll("700000001V", "Admin", "COL-05", &fp("adm"), &face("adm"), "o", T0).unwrap();
        sys.grant_role("700000001V", Role::Admin).unwrap();
        let admin = login(&mut sys, "700000001V", "adm");
        let voter = login(&mut sys, "901234567V", "1");
        assert!(sys.authorize(Some(&admin), Role::Officer, T0 + 20).allowed);
        let d = sys.authorize(Some(&voter), Role::Admin, T0 + 20);
        assert_eq!((d.allowed, d.reason.as_deref()), (false, Some("insufficient_role")));
        let d = sys.authorize(Some(&admin), Role::Admin, T0 + 10 + 15 * 60);
        assert_eq!((d.allowed, d.reason.as_deref()), (false, Some("expired")));
        assert_eq!(sys.authorize(None, Role::Voter, T0).reason.as_deref(), Some("missing"));
        assert_eq!(
            sys.authorize(Some(&Id128([0; 16])), Role::Voter, T0).reason.as_deref(),
            Some("unknown")
        );
    }

    #[test]
    fn every_operation_extends_a_valid_chain_and_replays() {
        #[derive(Default)]
        struct Capture(std::sync::Arc<std::sync::Mutex<Vec<Event>>>);
        impl EventSink for Capture {
            fn record(&mut self, events: &[Event]) -> Result<(), SinkError> {
                self.0.lock().unwrap().extend_from_slice(events);
                Ok(())
            }
        }
        let log = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let mut sys = ElectionSystem::new(
            SystemConfig::default(),
            ChaCha20Rng::seed_from_u64(5),
            Box::new(Capture(log.clone())),
        )
        .unwrap();
        sys.enroll("901234567V", "V", "COL-05", &fp("1"), &face("1"), "o", T0).unwrap();
        let e = sys.create_election(draft(&["COL-05"]), Role::Admin, T0).unwrap();
        sys.open_election(&e.election_id, Role::Admin).unwrap();
        let t = sys.issue_qr_token("901234567V", &e.election_id, T0 + 1).unwrap();
        let c = sys.redeem_qr_token(&t.token, T0 + 2).unwrap();
        sys.cast_vote(&c.value, &e.election_id, "A", T0 + 3).unwrap();
        sys.close_election(&e.election_id, Role::Admin, T0 + 4).unwrap();
        let types: Vec<_> = sys.audit_log().entries().iter().map(|e| e.event_type).collect();
        assert_eq!(
            types,
            vec![
                AuditEventType::VoterEnrolled,
                AuditEventType::ElectionCreated,
                AuditEventType::TokenIssued,
                AuditEventType::TokenRedeemed,
                AuditEventType::VoteCast,
                AuditEventType::ElectionClosed,
            ]
        );
        assert!(sys.verify_audit().valid);

        let mut replayed = State::default();
        for ev in log.lock().unwrap().iter() {
            replayed.apply(ev);
        }
        assert_eq!(&replayed, sys.state());
    }

    #[test]
    fn failing_sink_leaves_state_untouched() {
        struct Broken;
        impl EventSink for Broken {
            fn record(&mut self, _: &[Event]) -> Result<(), SinkError> {
                Err(SinkError("disk full".into()))
            }
        }
        let (sys, _) = fixture();
        let state = sys.state().clone();
        let mut sys = ElectionSystem::restore(state.clone(), SystemConfig::default(), ChaCha20Rng::seed_from_u64(0), Box::new(Broken));
        let err = sys
            .enroll("811111111V", "V", "COL-05", &fp("9"), &face("9"), "o", T0)
            .unwrap_err();
        assert_eq!(err, SystemError::Storage("disk full".into()));
        assert_eq!(sys.state(), &state);
    }
}
