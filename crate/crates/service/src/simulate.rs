//! Seeded in-process election day for `simulate-election`.
//!
//! Voters are enrolled through the service, authenticate at a station or
//! vote by QR, arrive over the day following a per-area cumulative curve
//! `F_a(t) = t^gamma_a`, and the projection is sampled at fixed fractions of
//! the voting window against curves rebuilt from noisy synthetic history.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use base64::Engine as _;
use evote_core::election::{Candidate, TallySnapshot};
use evote_core::projection::{self, HistoryPoint, Projection};
use evote_core::system::{ElectionDraft, Role};
use evote_core::Id128;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ServiceConfig, StaffEntry};
use crate::service::{ApiError, AuthRequest, EnrollRequest, ManualClock, Predictors, Service};

pub const DAY_START: u64 = 1_700_000_000;
pub const DAY_LENGTH: u64 = 10 * 3600;
pub const TRACE_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];
const ADMIN_NIC: &str = "900000001V";
const OFFICER_NIC: &str = "900000002V";

#[derive(Debug, Clone, Copy)]
pub struct SimulationParams {
    pub voters: usize,
    pub areas: usize,
    pub candidates: usize,
    pub seed: u64,
    /// Share of voters who show up at all.
    pub turnout: f64,
    /// Share of participating voters who use the QR (mobile) path.
    pub mobile_share: f64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            voters: 1000,
            areas: 5,
            candidates: 3,
            seed: 7,
            turnout: 0.8,
            mobile_share: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub election_id: Id128,
    pub enrolled: usize,
    pub station_votes: usize,
    pub mobile_votes: usize,
    pub rejected_attempts: usize,
    pub trace: Vec<Projection>,
    /// Projection at t = 1 over the final tally; not part of the rendered report.
    pub close_projection: Option<Projection>,
    pub final_tally: TallySnapshot,
    pub chain_valid: bool,
    pub chain_entries: usize,
}

impl SimulationReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "election {}", self.election_id);
        let _ = writeln!(
            out,
            "enrolled {} voters; {} station votes, {} mobile votes, {} rejected attempts",
            self.enrolled, self.station_votes, self.mobile_votes, self.rejected_attempts
        );
        for p in &self.trace {
            let counts: Vec<String> = p
                .projected_counts
                .iter()
                .map(|c| format!("{}={:.1}", c.candidate_id, c.projected_votes))
                .collect();
            let _ = writeln!(
                out,
                "projection t={:.2}: counted {} projected {:.1} [{}] leader {} win_probability {:.4}",
                p.as_of_fraction,
                p.counted_total,
                p.projected_total,
                counts.join(" "),
                p.leader,
                p.win_probability
            );
        }
        let counts: Vec<String> = self
            .final_tally
            .counts
            .iter()
            .map(|c| format!("{}={}", c.candidate_id, c.votes))
            .collect();
        let _ = writeln!(out, "final tally: {} total={}", counts.join(" "), self.final_tally.total);
        for area in self.final_tally.area_table() {
            let row: Vec<String> = area.1.iter().map(|(c, v)| format!("{c}={v}")).collect();
            let _ = writeln!(out, "  {}: {}", area.0, row.join(" "));
        }
        if self.chain_valid {
            let _ = writeln!(out, "chain valid ({} entries)", self.chain_entries);
        } else {
            let _ = writeln!(out, "chain INVALID ({} entries)", self.chain_entries);
        }
        out
    }
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

struct Person {
    nic: String,
    area: String,
    fingerprint: String,
    face: String,
}

fn person(rng: &mut ChaCha8Rng, nic: String, area: String) -> Person {
    let mut fp = vec![0u8; 256];
    let mut face = vec![0u8; 512];
    rng.fill_bytes(&mut fp);
    rng.fill_bytes(&mut face);
    Person {
        nic,
        area,
        fingerprint: b64(&fp),
        face: b64(&face),
    }
}

fn login(service: &Service, p: &Person) -> Result<Option<Id128>, ApiError> {
    let a = service.authenticate(&AuthRequest {
        nic: p.nic.clone(),
        fingerprint: p.fingerprint.clone(),
        face: p.face.clone(),
    })?;
    Ok(a.session_token)
}

/// Staff session that logs in again once the previous one has expired.
struct StaffSession {
    who: Person,
    token: Option<Id128>,
    expires_at: u64,
}

impl StaffSession {
    fn new(who: Person) -> Self {
        Self {
            who,
            token: None,
            expires_at: 0,
        }
    }

    fn token(&mut self, service: &Service) -> Result<Option<Id128>, ApiError> {
        if self.token.is_none() || service.now() >= self.expires_at {
            let a = service.authenticate(&AuthRequest {
                nic: self.who.nic.clone(),
                fingerprint: self.who.fingerprint.clone(),
                face: self.who.face.clone(),
            })?;
            self.token = a.session_token;
            self.expires_at = a.expires_at.unwrap_or(0);
        }
        Ok(self.token)
    }
}

/// Cumulative-fraction history for one area: the true curve sampled at
/// hourly fractions with multiplicative noise.
fn synthetic_history(rng: &mut ChaCha8Rng, area: &str, gamma: f64) -> Vec<HistoryPoint> {
    (1..10)
        .map(|h| {
            let t = h as f64 / 10.0;
            let noise = 1.0 + rng.random_range(-0.05..0.05);
            HistoryPoint {
                area_code: area.to_string(),
                time_fraction: t,
                cumulative_fraction: (t.powf(gamma) * noise).clamp(0.0, 1.0),
            }
        })
        .collect()
}

pub fn run(params: &SimulationParams) -> Result<SimulationReport, ApiError> {
    if params.voters == 0 || params.areas == 0 || params.candidates < 2 {
        return Err(ApiError::bad_request(
            "invalid_simulation",
            "need at least one voter, one area and two candidates",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let areas: Vec<String> = (1..=params.areas).map(|a| format!("AREA-{a:02}")).collect();
    let gammas: Vec<f64> = areas.iter().map(|_| rng.random_range(0.7..1.6)).collect();

    let mut history = Vec::new();
    for (area, &g) in areas.iter().zip(&gammas) {
        history.extend(synthetic_history(&mut rng, area, g));
    }
    let curves = projection::build_curves_from_history(&history)
        .map_err(|e| ApiError::new(500, "simulation_failed", e.to_string()))?;

    let config = ServiceConfig {
        staff: vec![
            StaffEntry {
                nic: ADMIN_NIC.into(),
                role: Role::Admin,
            },
            StaffEntry {
                nic: OFFICER_NIC.into(),
                role: Role::Officer,
            },
        ],
        ..ServiceConfig::default()
    };
    let clock = Arc::new(ManualClock::new(DAY_START - 3600));
    let mut predictors = Predictors::from_config(&config).map_err(|e| ApiError::new(500, "simulation_failed", e.to_string()))?;
    predictors.curves = curves;
    let service = Service::in_memory(&config, clock.clone(), params.seed, predictors);

    let admin = person(&mut rng, ADMIN_NIC.into(), areas[0].clone());
    let officer = person(&mut rng, OFFICER_NIC.into(), areas[0].clone());
    for staff in [&admin, &officer] {
        service.enroll_as_operator(
            &EnrollRequest {
                nic: staff.nic.clone(),
                full_name: "Staff".into(),
                area_code: staff.area.clone(),
                fingerprint: staff.fingerprint.clone(),
                face: staff.face.clone(),
            },
            "simulation",
        )?;
    }
    let mut admin = StaffSession::new(admin);
    let mut officer = StaffSession::new(officer);

    let mut voters = Vec::with_capacity(params.voters);
    for i in 0..params.voters {
        let area = areas[rng.random_range(0..areas.len())].clone();
        let p = person(&mut rng, format!("{:012}", 200_000_000_000u64 + i as u64), area);
        service.enroll(
            officer.token(&service)?.as_ref(),
            &EnrollRequest {
                nic: p.nic.clone(),
                full_name: format!("Voter {i}"),
                area_code: p.area.clone(),
                fingerprint: p.fingerprint.clone(),
                face: p.face.clone(),
            },
        )?;
        voters.push(p);
    }

    let candidates: Vec<Candidate> = (1..=params.candidates)
        .map(|c| Candidate::new(format!("C{c}"), format!("Candidate {c}")))
        .collect();
    // per-area preference weights over candidates
    let preferences: BTreeMap<&str, Vec<f64>> = areas
        .iter()
        .map(|a| (a.as_str(), (0..params.candidates).map(|_| rng.random_range(0.5..2.0)).collect()))
        .collect();

    let admin_token = admin.token(&service)?;
    let election = service.create_election(
        admin_token.as_ref(),
        ElectionDraft {
            name: format!("Simulated election {}", params.seed),
            area_codes: areas.clone(),
            candidates: candidates.clone(),
            opens_at: DAY_START,
            closes_at: DAY_START + DAY_LENGTH,
        },
    )?;
    let eid = election.election_id;
    service.open_election(admin_token.as_ref(), &eid)?;

    // (arrival time, voter index, mobile, candidate index)
    let mut arrivals: Vec<(u64, usize, bool, usize)> = Vec::new();
    for (i, v) in voters.iter().enumerate() {
        if rng.random::<f64>() >= params.turnout {
            continue;
        }
        let area_index = areas.iter().position(|a| *a == v.area).expect("known area");
        let u: f64 = rng.random();
        let t = u.powf(1.0 / gammas[area_index]);
        let at = DAY_START + ((t * (DAY_LENGTH - 1) as f64) as u64);
        let mobile = rng.random::<f64>() < params.mobile_share;
        let weights = &preferences[v.area.as_str()];
        let mut pick = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut choice = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if pick < *w {
                choice = k;
                break;
            }
            pick -= w;
        }
        arrivals.push((at, i, mobile, choice));
    }
    arrivals.sort();

    let mut trace = Vec::new();
    let mut next_trace = TRACE_FRACTIONS.iter().peekable();
    let (mut station_votes, mut mobile_votes, mut rejected) = (0, 0, 0);
    for &(at, i, mobile, choice) in &arrivals {
        while let Some(&&f) = next_trace.peek() {
            let mark = DAY_START + (f * DAY_LENGTH as f64) as u64;
            if at < mark {
                break;
            }
            clock.set(mark);
            trace.extend(sample_projection(&service, &eid, f)?);
            next_trace.next();
        }
        clock.set(at);
        let v = &voters[i];
        let candidate = &candidates[choice].candidate_id;
        let outcome = if mobile {
            officer
                .token(&service)
                .and_then(|t| service.issue_qr(t.as_ref(), &eid, &v.nic))
                .and_then(|qr| service.redeem_qr(&qr.payload))
                .and_then(|c| service.cast_vote(Some(&c.credential), &eid, candidate))
        } else {
            login(&service, v).and_then(|t| service.cast_vote(t.as_ref(), &eid, candidate))
        };
        match outcome {
            Ok(_) if mobile => mobile_votes += 1,
            Ok(_) => station_votes += 1,
            Err(e) => {
                log::debug!("voter {} rejected: {e}", v.nic);
                rejected += 1;
            }
        }
    }
    for &f in next_trace {
        clock.set(DAY_START + (f * DAY_LENGTH as f64) as u64);
        trace.extend(sample_projection(&service, &eid, f)?);
    }

    clock.set(DAY_START + DAY_LENGTH);
    let admin_token = admin.token(&service)?;
    service.close_election(admin_token.as_ref(), &eid)?;
    let final_tally = service.tally(&eid)?;
    let close_projection = sample_projection(&service, &eid, 1.0)?;
    let verdict = service.verify_audit(admin_token.as_ref())?.verdict;

    Ok(SimulationReport {
        election_id: eid,
        enrolled: voters.len(),
        station_votes,
        mobile_votes,
        rejected_attempts: rejected,
        trace,
        close_projection,
        final_tally,
        chain_valid: verdict.valid,
        chain_entries: verdict.entries,
    })
}

/// `None` while nothing has been counted yet.
fn sample_projection(service: &Service, eid: &Id128, t: f64) -> Result<Option<Projection>, ApiError> {
    match service.projection(eid, t) {
        Ok(p) => Ok(Some(p)),
        Err(e) if e.code == "empty_tally" => Ok(None),
        Err(e) => Err(e),
    }
}
