//! Voter identity: biometric templates, the composite image ID and the
//! similarity score used to let a returning voter in.
//!
//! Sensor processing is not modelled. A capture is an opaque byte payload and
//! its template is a 512-bit digest-fold of that payload: the payload is cut
//! into 64-byte blocks, every block is hashed twice (once per template half)
//! with a key made of the modality tag, the half selector and the block index,
//! and the block digests are XOR-accumulated into the two 256-bit halves.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{sha256, Digest256, Id128};

pub const TEMPLATE_BITS: usize = 512;
pub const TEMPLATE_BYTES: usize = TEMPLATE_BITS / 8;
pub const MAX_CAPTURE_BYTES: usize = 1 << 20;
pub const BLOCK_BYTES: usize = 64;
/// Per-modality similarity a fresh capture must reach.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.90;

const TEMPLATE_DOMAIN: &[u8] = b"evote/template/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("biometric capture is empty")]
    EmptyCapture,
    #[error("biometric capture is {0} bytes, above the {MAX_CAPTURE_BYTES} byte limit")]
    CaptureTooLarge(usize),
    #[error("expected a {expected} capture, got {found}")]
    KindMismatch {
        expected: BiometricKind,
        found: BiometricKind,
    },
    #[error("NIC {0:?} is not 9 digits followed by V/X, nor 12 digits")]
    InvalidNicFormat(String),
    #[error("NIC {0} is already enrolled")]
    DuplicateNic(String),
    #[error("NIC {0} is not enrolled")]
    UnknownNic(String),
    #[error("{0} must not be empty")]
    MissingField(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiometricKind {
    Fingerprint,
    Face,
}

impl BiometricKind {
    fn tag(self) -> u8 {
        match self {
            BiometricKind::Fingerprint => 0,
            BiometricKind::Face => 1,
        }
    }
}

impl std::fmt::Display for BiometricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BiometricKind::Fingerprint => "fingerprint",
            BiometricKind::Face => "face",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiometricCapture {
    pub kind: BiometricKind,
    pub payload: Vec<u8>,
    pub captured_at: u64,
}

impl BiometricCapture {
    pub fn new(kind: BiometricKind, payload: impl Into<Vec<u8>>, captured_at: u64) -> Self {
        Self {
            kind,
            payload: payload.into(),
            captured_at,
        }
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        if self.payload.is_empty() {
            return Err(IdentityError::EmptyCapture);
        }
        if self.payload.len() > MAX_CAPTURE_BYTES {
            return Err(IdentityError::CaptureTooLarge(self.payload.len()));
        }
        Ok(())
    }

    fn expect_kind(&self, expected: BiometricKind) -> Result<(), IdentityError> {
        if self.kind != expected {
            return Err(IdentityError::KindMismatch {
                expected,
                found: self.kind,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BiometricTemplate {
    pub kind: BiometricKind,
    pub bits: [u8; TEMPLATE_BYTES],
}

impl std::fmt::Debug for BiometricTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BiometricTemplate({}, {})", self.kind, hex::encode(self.bits))
    }
}

impl BiometricTemplate {
    pub fn hamming(&self, other: &BiometricTemplate) -> u32 {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Copy with bit `i` (0..512, little-endian within each byte) inverted.
    pub fn with_bit_flipped(mut self, i: usize) -> Self {
        self.bits[i / 8] ^= 1 << (i % 8);
        self
    }

    pub fn complement(mut self) -> Self {
        for b in self.bits.iter_mut() {
            *b = !*b;
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct TemplateRepr {
    kind: BiometricKind,
    bits: String,
}

impl Serialize for BiometricTemplate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TemplateRepr {
            kind: self.kind,
            bits: hex::encode(self.bits),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BiometricTemplate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TemplateRepr::deserialize(deserializer)?;
        let mut bits = [0u8; TEMPLATE_BYTES];
        hex::decode_to_slice(&repr.bits, &mut bits).map_err(serde::de::Error::custom)?;
        Ok(Self {
            kind: repr.kind,
            bits,
        })
    }
}

/// Single public identifier binding both templates to the NIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompositeId(pub Digest256);

impl std::fmt::Display for CompositeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterRecord {
    pub nic: String,
    pub full_name: String,
    pub area_code: String,
    pub fingerprint_template: BiometricTemplate,
    pub face_template: BiometricTemplate,
    pub composite_id: CompositeId,
    pub enrolled_at: u64,
    pub enrolled_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub accepted: bool,
    pub fingerprint_score: f64,
    pub face_score: f64,
    pub session_token: Option<Id128>,
}

pub fn extract_template(capture: &BiometricCapture) -> Result<BiometricTemplate, IdentityError> {
    capture.validate()?;
    let mut bits = [0u8; TEMPLATE_BYTES];
    let tag = [capture.kind.tag()];
    for (index, block) in capture.payload.chunks(BLOCK_BYTES).enumerate() {
        let index = (index as u64).to_be_bytes();
        for (half, out) in bits.chunks_mut(32).enumerate() {
            let digest = sha256(&[TEMPLATE_DOMAIN, &tag, &[half as u8], &index, block]);
            for (o, d) in out.iter_mut().zip(digest.0.iter()) {
                *o ^= d;
            }
        }
    }
    Ok(BiometricTemplate {
        kind: capture.kind,
        bits,
    })
}

/// SHA-256 of `fp_bits ‖ face_bits ‖ UTF-8(nic)`.
pub fn composite_id(fp: &BiometricTemplate, face: &BiometricTemplate, nic: &str) -> CompositeId {
    CompositeId(sha256(&[&fp.bits, &face.bits, nic.as_bytes()]))
}

/// Normalized Hamming similarity, `1 - hamming / 512`.
pub fn similarity(a: &BiometricTemplate, b: &BiometricTemplate) -> Result<f64, IdentityError> {
    if a.kind != b.kind {
        return Err(IdentityError::KindMismatch {
            expected: a.kind,
            found: b.kind,
        });
    }
    Ok(1.0 - f64::from(a.hamming(b)) / TEMPLATE_BITS as f64)
}

/// Sri Lankan NIC: nine digits plus `V`/`X` (old format) or twelve digits.
pub fn validate_nic(nic: &str) -> Result<(), IdentityError> {
    let bytes = nic.as_bytes();
    let ok = match bytes.len() {
        10 => {
            bytes[..9].iter().all(u8::is_ascii_digit)
                && matches!(bytes[9], b'V' | b'v' | b'X' | b'x')
        }
        12 => bytes.iter().all(u8::is_ascii_digit),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(IdentityError::InvalidNicFormat(nic.to_string()))
    }
}

/// Builds a voter record from raw captures. Uniqueness is the caller's job.
pub fn build_record(
    nic: &str,
    full_name: &str,
    area_code: &str,
    fp_capture: &BiometricCapture,
    face_capture: &BiometricCapture,
    officer: &str,
    now: u64,
) -> Result<VoterRecord, IdentityError> {
    validate_nic(nic)?;
    if area_code.trim().is_empty() {
        return Err(IdentityError::MissingField("area_code"));
    }
    if full_name.trim().is_empty() {
        return Err(IdentityError::MissingField("full_name"));
    }
    fp_capture.expect_kind(BiometricKind::Fingerprint)?;
    face_capture.expect_kind(BiometricKind::Face)?;
    let fingerprint_template = extract_template(fp_capture)?;
    let face_template = extract_template(face_capture)?;
    Ok(VoterRecord {
        nic: nic.to_string(),
        full_name: full_name.to_string(),
        area_code: area_code.to_string(),
        composite_id: composite_id(&fingerprint_template, &face_template, nic),
        fingerprint_template,
        face_template,
        enrolled_at: now,
        enrolled_by: officer.to_string(),
    })
}

/// Scores fresh templates against an enrolled record.
///
/// Returns `(fingerprint_score, face_score, accepted)`.
pub fn match_templates(
    record: &VoterRecord,
    fp: &BiometricTemplate,
    face: &BiometricTemplate,
    threshold: f64,
) -> Result<(f64, f64, bool), IdentityError> {
    let fp_score = similarity(&record.fingerprint_template, fp)?;
    let face_score = similarity(&record.face_template, face)?;
    Ok((fp_score, face_score, fp_score >= threshold && face_score >= threshold))
}

/// Scores raw captures against an enrolled record.
pub fn match_captures(
    record: &VoterRecord,
    fp_capture: &BiometricCapture,
    face_capture: &BiometricCapture,
    threshold: f64,
) -> Result<(f64, f64, bool), IdentityError> {
    fp_capture.expect_kind(BiometricKind::Fingerprint)?;
    face_capture.expect_kind(BiometricKind::Face)?;
    let fp = extract_template(fp_capture)?;
    let face = extract_template(face_capture)?;
    match_templates(record, &fp, &face, threshold)
}
