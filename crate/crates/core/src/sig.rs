//! Badge derivation: a hash-chain signature seeded by the quantum number,
//! plus the HSL card colour encoded from the Bell measurement.

use base64::engine::general_purpose::STANDARD_NO_PAD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake256;

use crate::backend::{BellVector, QuantumResult};

pub const NONCE_LEN: usize = 32;
/// Hue step per unit of q_num, in degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 137.5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SigError {
    #[error("nonce must be {NONCE_LEN} bytes, got {0}")]
    NonceLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HslColor {
    pub h: f64,
    pub s: f64,
    pub l: f64,
}

impl HslColor {
    /// CSS `hsl()` form served to clients verbatim.
    pub fn css(&self) -> String {
        format!("hsl({}, {}%, {}%)", self.h, self.s, self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Badge {
    pub q_num: u16,
    pub pk_hash: String,
    pub signature: String,
    pub color: HslColor,
    pub nonce_hex: String,
}

impl Badge {
    /// `Q#<q_num> | <pk_hash>`
    pub fn render(&self) -> String {
        format!("Q#{} | {}", self.q_num, self.pk_hash)
    }
}

/// SHAKE-256 seed: username ‖ be16(q_num) ‖ nonce, squeezed to 64 bytes.
pub fn seed_bytes(username: &str, q_num: u16, nonce: &[u8; NONCE_LEN]) -> [u8; 64] {
    let mut xof = Shake256::default();
    xof.update(username.as_bytes());
    xof.update(&q_num.to_be_bytes());
    xof.update(nonce);
    let mut out = [0u8; 64];
    xof.finalize_xof().read(&mut out);
    out
}

/// Twelve uppercase hex characters: the first 6 bytes of SHA-256(seed[0..32]).
pub fn pk_hash(seed: &[u8; 64]) -> String {
    let digest = Sha256::digest(&seed[..32]);
    hex::encode_upper(&digest[..6])
}

/// Base64 (no padding) of the first 18 bytes of
/// SHA-256(hex(SHA-256(text)) ":" hex(SHA-256(decimal q_num)) ":" pk_hash).
pub fn signature(message_text: &str, q_num: u16, pk_hash: &str) -> String {
    let msg = hex::encode(Sha256::digest(message_text.as_bytes()));
    let ent = hex::encode(Sha256::digest(q_num.to_string().as_bytes()));
    let joined = format!("{msg}:{ent}:{pk_hash}");
    let digest = Sha256::digest(joined.as_bytes());
    STANDARD_NO_PAD.encode(&digest[..18])
}

pub fn derive_badge(
    username: &str,
    message_text: &str,
    qr: &QuantumResult,
    nonce: &[u8],
) -> Result<Badge, SigError> {
    let nonce: &[u8; NONCE_LEN] = nonce
        .try_into()
        .map_err(|_| SigError::NonceLength(nonce.len()))?;
    let seed = seed_bytes(username, qr.q_num, nonce);
    let pk_hash = pk_hash(&seed);
    let signature = signature(message_text, qr.q_num, &pk_hash);
    Ok(Badge {
        q_num: qr.q_num,
        pk_hash,
        signature,
        color: encode_color(qr.q_num, &qr.bell),
        nonce_hex: hex::encode(nonce),
    })
}

/// h = (q·137.5) mod 360, s = 70 + 30·P(00), l = 45 + 20·P(11).
pub fn encode_color(q_num: u16, bell: &BellVector) -> HslColor {
    let beta0 = bell.p00.clamp(0.0, 1.0);
    let beta3 = bell.p11.clamp(0.0, 1.0);
    HslColor {
        h: (f64::from(q_num) * GOLDEN_ANGLE_DEG).rem_euclid(360.0),
        s: 70.0 + beta0 * 30.0,
        l: 45.0 + beta3 * 20.0,
    }
}
