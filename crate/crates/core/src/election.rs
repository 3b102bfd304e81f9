//! Election domain types: contests, one-time QR tokens, anonymous ballots,
//! participation markers and tally snapshots.
//!
//! A cast vote produces two records that never reference each other: a
//! [`VotedMarker`] (who voted, not how) and a [`Ballot`] (how, not who).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest256, Id128};
use crate::identity::VoterRecord;

pub const QR_SCHEME: &str = "evote://v1/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionStatus {
    Draft,
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub display_name: String,
}

impl Candidate {
    pub fn new(candidate_id: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self {
            candidate_id: candidate_id.into(),
            display_name: display_name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Election {
    pub election_id: Id128,
    pub name: String,
    pub area_codes: BTreeSet<String>,
    pub candidates: Vec<Candidate>,
    pub opens_at: u64,
    pub closes_at: u64,
    pub status: ElectionStatus,
}

impl Election {
    pub fn has_candidate(&self, candidate_id: &str) -> bool {
        self.candidates.iter().any(|c| c.candidate_id == candidate_id)
    }

    pub fn candidate_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.candidate_id.clone()).collect()
    }

    /// Accepting votes: status open and `now` inside `[opens_at, closes_at)`.
    pub fn is_open_at(&self, now: u64) -> bool {
        self.status == ElectionStatus::Open && self.opens_at <= now && now < self.closes_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Station,
    Mobile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrToken {
    pub token: Id128,
    pub election_id: Id128,
    pub voter_nic: String,
    pub issued_at: u64,
    pub expires_at: u64,
    pub consumed: bool,
}

impl QrToken {
    pub fn payload(&self) -> String {
        qr_payload(&self.election_id, &self.token)
    }
}

/// `evote://v1/<election_id hex>/<token hex>`
pub fn qr_payload(election_id: &Id128, token: &Id128) -> String {
    format!("{QR_SCHEME}{}/{}", election_id.to_hex(), token.to_hex())
}

/// Inverse of [`qr_payload`]; `None` for anything that is not exactly that shape.
pub fn parse_qr_payload(payload: &str) -> Option<(Id128, Id128)> {
    let rest = payload.strip_prefix(QR_SCHEME)?;
    let (election, token) = rest.split_once('/')?;
    if election.len() != 32 || token.len() != 32 {
        return None;
    }
    Some((election.parse().ok()?, token.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub ballot_id: Id128,
    pub election_id: Id128,
    pub candidate_id: String,
    pub area_code: String,
    pub cast_minute: u64,
    pub channel: Channel,
    pub receipt: Digest256,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotedMarker {
    pub voter_nic: String,
    pub election_id: Id128,
    pub channel: Channel,
    pub marked_at: u64,
}

pub fn truncate_to_minute(ts: u64) -> u64 {
    ts - ts % 60
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCount {
    pub candidate_id: String,
    pub votes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaCount {
    pub area_code: String,
    pub candidate_id: String,
    pub votes: u64,
}

/// Counts in candidate order; per-area rows cover every (area, candidate) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallySnapshot {
    pub election_id: Id128,
    pub as_of: u64,
    pub counts: Vec<CandidateCount>,
    pub per_area: Vec<AreaCount>,
    pub total: u64,
}

impl TallySnapshot {
    pub fn votes_for(&self, candidate_id: &str) -> u64 {
        self.counts
            .iter()
            .find(|c| c.candidate_id == candidate_id)
            .map_or(0, |c| c.votes)
    }

    /// Per-area counts as `area -> candidate -> votes`.
    pub fn area_table(&self) -> BTreeMap<&str, BTreeMap<&str, u64>> {
        let mut table: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
        for row in &self.per_area {
            table
                .entry(row.area_code.as_str())
                .or_default()
                .insert(row.candidate_id.as_str(), row.votes);
        }
        table
    }
}

/// Aggregates ballots cast at or before `as_of`.
pub fn tally_ballots<'a>(
    election: &Election,
    ballots: impl IntoIterator<Item = &'a Ballot>,
    as_of: u64,
) -> TallySnapshot {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut per_area: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut total = 0u64;
    for ballot in ballots {
        if ballot.election_id != election.election_id || ballot.cast_minute > as_of {
            continue;
        }
        *counts.entry(ballot.candidate_id.as_str()).or_default() += 1;
        *per_area
            .entry((ballot.area_code.as_str(), ballot.candidate_id.as_str()))
            .or_default() += 1;
        total += 1;
    }
    let counts_out = election
        .candidates
        .iter()
        .map(|c| CandidateCount {
            candidate_id: c.candidate_id.clone(),
            votes: counts.get(c.candidate_id.as_str()).copied().unwrap_or(0),
        })
        .collect();
    let mut per_area_out = Vec::new();
    for area in &election.area_codes {
        for c in &election.candidates {
            per_area_out.push(AreaCount {
                area_code: area.clone(),
                candidate_id: c.candidate_id.clone(),
                votes: per_area
                    .get(&(area.as_str(), c.candidate_id.as_str()))
                    .copied()
                    .unwrap_or(0),
            });
        }
    }
    TallySnapshot {
        election_id: election.election_id,
        as_of,
        counts: counts_out,
        per_area: per_area_out,
        total,
    }
}

/// Registered area inside the election and no participation marker yet.
pub fn check_eligibility(voter: &VoterRecord, election: &Election, already_voted: bool) -> bool {
    election.area_codes.contains(&voter.area_code) && !already_voted
}
