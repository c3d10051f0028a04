//! Quantum execution followed by badge derivation, plus the offline and
//! verification entry points built on it.

use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{self, BellVector, PipelineRequest, QuantumBackend, QuantumResult};
use crate::qsim::ShotHistogram;
use crate::sig::{self, Badge, HslColor, SigError, NONCE_LEN};
use crate::store::{MessageRecord, Provenance};

#[derive(Debug, Clone, PartialEq)]
pub struct Issued {
    pub result: QuantumResult,
    pub badge: Badge,
}

impl Issued {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            device: self.result.device.clone(),
            algorithm: self.result.algorithm.clone(),
            duration_ms: self.result.duration_ms,
            bell: self.result.bell,
            q_num: self.result.q_num,
        }
    }
}

pub async fn issue_badge(
    req: &PipelineRequest,
    message_text: &str,
    backend: &QuantumBackend,
    timeout: Duration,
) -> Issued {
    let result = backend::execute_pipeline(req, backend, timeout).await;
    let badge = sig::derive_badge(&req.username, message_text, &result, &req.nonce)
        .expect("request nonce has the fixed length");
    Issued { result, badge }
}

/// Deterministic 32-byte nonce for offline runs that do not supply one.
pub fn nonce_from_seed(seed: u64) -> [u8; NONCE_LEN] {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6E6F_6E63_655F_7631);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    nonce
}

/// Everything an offline run produces except wall-clock duration, so two
/// runs with the same inputs serialise to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineBadge {
    pub username: String,
    pub text: String,
    pub rng_seed: u64,
    pub timestamp_ms: u64,
    pub q_num: u16,
    pub pk_hash: String,
    pub signature: String,
    pub nonce_hex: String,
    pub color: HslColor,
    pub css: String,
    pub bell: BellVector,
    pub device: String,
    pub algorithm: String,
    pub hist_a: Option<ShotHistogram>,
    pub hist_b: Option<ShotHistogram>,
    pub rendered: String,
}

impl OfflineBadge {
    pub fn from_issued(req: &PipelineRequest, text: &str, issued: &Issued) -> Self {
        let Issued { result, badge } = issued;
        Self {
            username: req.username.clone(),
            text: text.to_owned(),
            rng_seed: req.rng_seed,
            timestamp_ms: req.timestamp_ms,
            q_num: badge.q_num,
            pk_hash: badge.pk_hash.clone(),
            signature: badge.signature.clone(),
            nonce_hex: badge.nonce_hex.clone(),
            color: badge.color,
            css: badge.color.css(),
            bell: result.bell,
            device: result.device.clone(),
            algorithm: result.algorithm.clone(),
            hist_a: result.hist_a.clone(),
            hist_b: result.hist_b.clone(),
            rendered: badge.render(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("offline badge serialises")
    }
}

/// Runs the full pipeline on the local simulator with fixed inputs.
pub async fn offline_badge(
    username: &str,
    text: &str,
    rng_seed: u64,
    nonce: [u8; NONCE_LEN],
    timestamp_ms: u64,
    backend: &QuantumBackend,
    timeout: Duration,
) -> OfflineBadge {
    let req = PipelineRequest {
        username: username.to_owned(),
        rng_seed,
        nonce,
        timestamp_ms,
    };
    let issued = issue_badge(&req, text, backend, timeout).await;
    OfflineBadge::from_issued(&req, text, &issued)
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("record {0} has no badge yet")]
    NotCompleted(String),
    #[error("record {0} has no provenance")]
    MissingProvenance(String),
    #[error("stored nonce is not valid hex")]
    BadNonce(#[from] hex::FromHexError),
    #[error(transparent)]
    Sig(#[from] SigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub message_id: String,
    pub matches: bool,
    pub stored: Badge,
    pub recomputed: Badge,
}

/// Recomputes the badge from the stored sender handle, text, q_num, Bell
/// vector and nonce, and compares it with the stored one.
pub fn verify_record(record: &MessageRecord) -> Result<Verification, VerifyError> {
    let stored = record
        .badge
        .clone()
        .ok_or_else(|| VerifyError::NotCompleted(record.message_id.clone()))?;
    let prov = record
        .provenance
        .as_ref()
        .ok_or_else(|| VerifyError::MissingProvenance(record.message_id.clone()))?;
    let nonce = hex::decode(&stored.nonce_hex)?;
    let qr = QuantumResult::synthetic(prov.q_num, prov.bell);
    let recomputed = sig::derive_badge(&record.sender_handle, &record.text, &qr, &nonce)?;
    Ok(Verification {
        message_id: record.message_id.clone(),
        matches: recomputed == stored,
        stored,
        recomputed,
    })
}
