//! Append-only, SHA-256 hash-chained audit log.
//!
//! Every entry commits to its predecessor through `prev_hash`, so rewriting
//! any persisted entry breaks verification at that entry. The hash input is
//! the fixed 81-byte layout
//!
//! ```text
//! index (u64 BE) ‖ timestamp (u64 BE) ‖ event_type (u8) ‖ payload_digest (32) ‖ prev_hash (32)
//! ```
//!
//! and the serialized record appends the 32-byte `entry_hash` to it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha256, Digest256};

/// Digest used for every hash in the chain; recorded in persisted state.
pub const HASH_ALGORITHM: &str = "sha256";
pub const HASH_INPUT_LEN: usize = 8 + 8 + 1 + 32 + 32;
pub const RECORD_LEN: usize = HASH_INPUT_LEN + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEventType {
    VoterEnrolled,
    AuthAttempt,
    ElectionCreated,
    TokenIssued,
    TokenRedeemed,
    VoteCast,
    ElectionClosed,
}

impl AuditEventType {
    pub const ALL: [AuditEventType; 7] = [
        AuditEventType::VoterEnrolled,
        AuditEventType::AuthAttempt,
        AuditEventType::ElectionCreated,
        AuditEventType::TokenIssued,
        AuditEventType::TokenRedeemed,
        AuditEventType::VoteCast,
        AuditEventType::ElectionClosed,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub index: u64,
    pub timestamp: u64,
    pub event_type: AuditEventType,
    pub payload_digest: Digest256,
    pub prev_hash: Digest256,
    pub entry_hash: Digest256,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditDecodeError {
    #[error("audit record is {0} bytes, expected {RECORD_LEN}")]
    Length(usize),
    #[error("unknown audit event type code {0}")]
    EventType(u8),
}

impl AuditEntry {
    /// Builds the entry that follows `prev` (or the genesis entry).
    pub fn next(
        prev: Option<&AuditEntry>,
        event_type: AuditEventType,
        payload_digest: Digest256,
        timestamp: u64,
    ) -> Self {
        let (index, prev_hash) = match prev {
            Some(p) => (p.index + 1, p.entry_hash),
            None => (0, Digest256::default()),
        };
        let mut entry = AuditEntry {
            index,
            timestamp,
            event_type,
            payload_digest,
            prev_hash,
            entry_hash: Digest256::default(),
        };
        entry.entry_hash = entry.compute_hash();
        entry
    }

    pub fn hash_input(&self) -> [u8; HASH_INPUT_LEN] {
        let mut out = [0u8; HASH_INPUT_LEN];
        out[0..8].copy_from_slice(&self.index.to_be_bytes());
        out[8..16].copy_from_slice(&self.timestamp.to_be_bytes());
        out[16] = self.event_type.code();
        out[17..49].copy_from_slice(&self.payload_digest.0);
        out[49..81].copy_from_slice(&self.prev_hash.0);
        out
    }

    pub fn compute_hash(&self) -> Digest256 {
        sha256(&[&self.hash_input()])
    }

    pub fn to_bytes(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[..HASH_INPUT_LEN].copy_from_slice(&self.hash_input());
        out[HASH_INPUT_LEN..].copy_from_slice(&self.entry_hash.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuditDecodeError> {
        if bytes.len() != RECORD_LEN {
            return Err(AuditDecodeError::Length(bytes.len()));
        }
        let word = |at: usize| u64::from_be_bytes(bytes[at..at + 8].try_into().unwrap());
        let digest = |at: usize| Digest256(bytes[at..at + 32].try_into().unwrap());
        Ok(AuditEntry {
            index: word(0),
            timestamp: word(8),
            event_type: AuditEventType::from_code(bytes[16])
                .ok_or(AuditDecodeError::EventType(bytes[16]))?,
            payload_digest: digest(17),
            prev_hash: digest(49),
            entry_hash: digest(81),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerdict {
    pub valid: bool,
    pub first_bad_index: Option<u64>,
    pub entries: usize,
}

/// Checks position, linkage and hash of every entry, reporting the first
/// position that fails.
pub fn verify_chain(entries: &[AuditEntry]) -> ChainVerdict {
    let mut prev_hash = Digest256::default();
    for (position, entry) in entries.iter().enumerate() {
        let ok = entry.index == position as u64
            && entry.prev_hash == prev_hash
            && entry.compute_hash() == entry.entry_hash;
        if !ok {
            return ChainVerdict {
                valid: false,
                first_bad_index: Some(position as u64),
                entries: entries.len(),
            };
        }
        prev_hash = entry.entry_hash;
    }
    ChainVerdict {
        valid: true,
        first_bad_index: None,
        entries: entries.len(),
    }
}

/// Same as [`verify_chain`] over serialized records; an undecodable record
/// is a violation at its own position.
pub fn verify_serialized<B: AsRef<[u8]>>(records: &[B]) -> ChainVerdict {
    let mut decoded = Vec::with_capacity(records.len());
    for (position, raw) in records.iter().enumerate() {
        match AuditEntry::from_bytes(raw.as_ref()) {
            Ok(e) => decoded.push(e),
            Err(_) => {
                let prefix = verify_chain(&decoded);
                return ChainVerdict {
                    valid: false,
                    first_bad_index: Some(prefix.first_bad_index.unwrap_or(position as u64)),
                    entries: records.len(),
                };
            }
        }
    }
    verify_chain(&decoded)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn head(&self) -> Option<&AuditEntry> {
        self.entries.last()
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry `append` would add, without adding it.
    pub fn prepare(
        &self,
        event_type: AuditEventType,
        payload_digest: Digest256,
        now: u64,
    ) -> AuditEntry {
        AuditEntry::next(self.head(), event_type, payload_digest, now)
    }

    pub fn append(
        &mut self,
        event_type: AuditEventType,
        payload_digest: Digest256,
        now: u64,
    ) -> AuditEntry {
        let entry = self.prepare(event_type, payload_digest, now);
        self.entries.push(entry);
        entry
    }

    /// Pushes an already-built entry (journal replay).
    pub fn push(&mut self, entry: AuditEntry) {
        self.entries.push(entry);
    }

    pub fn verify(&self) -> ChainVerdict {
        verify_chain(&self.entries)
    }
}
