//! ChaCha20 (RFC 8439) and the robot-to-local-server telemetry frame.
//!
//! Wire frame, byte for byte:
//!
//! ```text
//! offset  size  field
//! 0       1     version, always 0x01
//! 1       12    nonce (robot id u32 BE || message counter u64 BE)
//! 13      n     ciphertext, same length as the plaintext
//! ```
//!
//! The frame carries no authentication tag. A stream cipher hides the
//! payload but cannot detect modification in transit.
//!
//! Telemetry plaintext is a fixed 48-byte little-endian record:
//! `lat f64 | lon f64 | co2 f64 | co f64 | ch4 f64 | timestamp_ms u64`.

use std::collections::HashSet;

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const BLOCK_LEN: usize = 64;
pub const FRAME_VERSION: u8 = 0x01;
pub const FRAME_HEADER_LEN: usize = 1 + NONCE_LEN;
pub const TELEMETRY_LEN: usize = 48;

const SIGMA: [u32; 4] = [0x6170_7865, 0x3320_646e, 0x7962_2d32, 0x6b20_6574];

#[inline(always)]
fn quarter_round(s: &mut [u32; 16], a: usize, b: usize, c: usize, d: usize) {
    s[a] = s[a].wrapping_add(s[b]);
    s[d] = (s[d] ^ s[a]).rotate_left(16);
    s[c] = s[c].wrapping_add(s[d]);
    s[b] = (s[b] ^ s[c]).rotate_left(12);
    s[a] = s[a].wrapping_add(s[b]);
    s[d] = (s[d] ^ s[a]).rotate_left(8);
    s[c] = s[c].wrapping_add(s[d]);
    s[b] = (s[b] ^ s[c]).rotate_left(7);
}

pub fn chacha20_block(key: &[u8; KEY_LEN], counter: u32, nonce: &[u8; NONCE_LEN]) -> [u8; BLOCK_LEN] {
    let mut state = [0u32; 16];
    state[..4].copy_from_slice(&SIGMA);
    for (i, chunk) in key.chunks_exact(4).enumerate() {
        state[4 + i] = u32::from_le_bytes(chunk.try_into().unwrap());
    }
    state[12] = counter;
    for (i, chunk) in nonce.chunks_exact(4).enumerate() {
        state[13 + i] = u32::from_le_bytes(chunk.try_into().unwrap());
    }

    let mut working = state;
    for _ in 0..10 {
        quarter_round(&mut working, 0, 4, 8, 12);
        quarter_round(&mut working, 1, 5, 9, 13);
        quarter_round(&mut working, 2, 6, 10, 14);
        quarter_round(&mut working, 3, 7, 11, 15);
        quarter_round(&mut working, 0, 5, 10, 15);
        quarter_round(&mut working, 1, 6, 11, 12);
        quarter_round(&mut working, 2, 7, 8, 13);
        quarter_round(&mut working, 3, 4, 9, 14);
    }

    let mut out = [0u8; BLOCK_LEN];
    for i in 0..16 {
        let word = working[i].wrapping_add(state[i]);
        out[4 * i..4 * i + 4].copy_from_slice(&word.to_le_bytes());
    }
    out
}

/// XORs `data` in place with the keystream starting at block `counter`.
pub fn apply_keystream(key: &[u8; KEY_LEN], counter: u32, nonce: &[u8; NONCE_LEN], data: &mut [u8]) {
    for (j, chunk) in data.chunks_mut(BLOCK_LEN).enumerate() {
        let block = chacha20_block(key, counter.wrapping_add(j as u32), nonce);
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ChaChaKey {
    pub key: [u8; KEY_LEN],
    pub nonce: [u8; NONCE_LEN],
    pub initial_counter: u32,
}

impl std::fmt::Debug for ChaChaKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChaChaKey")
            .field("key", &"<redacted>")
            .field("nonce", &self.nonce)
            .field("initial_counter", &self.initial_counter)
            .finish()
    }
}

impl ChaChaKey {
    pub fn new(key: [u8; KEY_LEN], nonce: [u8; NONCE_LEN]) -> Self {
        Self {
            key,
            nonce,
            initial_counter: 1,
        }
    }
}

/// Nonce layout: 4-byte big-endian sender id followed by an 8-byte
/// big-endian message counter.
pub fn make_nonce(sender_id: u32, counter: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[..4].copy_from_slice(&sender_id.to_be_bytes());
    n[4..].copy_from_slice(&counter.to_be_bytes());
    n
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherFrame {
    pub version: u8,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl CipherFrame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.ciphertext.len());
        out.push(self.version);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(Error::Decoding(format!(
                "frame of {} bytes is shorter than its {FRAME_HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[0] != FRAME_VERSION {
            return Err(Error::Decoding(format!("unknown frame version {:#04x}", bytes[0])));
        }
        Ok(Self {
            version: bytes[0],
            nonce: bytes[1..FRAME_HEADER_LEN].try_into().unwrap(),
            ciphertext: bytes[FRAME_HEADER_LEN..].to_vec(),
        })
    }
}

/// Sender-side record of nonces already spent under one key.
#[derive(Debug, Default, Clone)]
pub struct NonceLedger {
    used: HashSet<[u8; NONCE_LEN]>,
}

impl NonceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn used(&self) -> usize {
        self.used.len()
    }

    pub fn encrypt(&mut self, key: &ChaChaKey, plaintext: &[u8]) -> Result<CipherFrame> {
        if !self.used.insert(key.nonce) {
            return Err(Error::NonceReuse);
        }
        let mut ciphertext = plaintext.to_vec();
        apply_keystream(&key.key, key.initial_counter, &key.nonce, &mut ciphertext);
        Ok(CipherFrame {
            version: FRAME_VERSION,
            nonce: key.nonce,
            ciphertext,
        })
    }
}

/// Decrypts with the frame's own nonce; `key.nonce` is ignored.
pub fn decrypt(key: &ChaChaKey, frame: &CipherFrame) -> Result<Vec<u8>> {
    if frame.version != FRAME_VERSION {
        return Err(Error::Decoding(format!("unknown frame version {:#04x}", frame.version)));
    }
    let mut plaintext = frame.ciphertext.clone();
    apply_keystream(&key.key, key.initial_counter, &frame.nonce, &mut plaintext);
    Ok(plaintext)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRecord {
    pub lat: f64,
    pub lon: f64,
    pub co2_ppm: f64,
    pub co_ppm: f64,
    pub ch4_ppm: f64,
    pub timestamp_ms: u64,
}

impl TelemetryRecord {
    pub fn encode(&self) -> Result<[u8; TELEMETRY_LEN]> {
        let floats = [self.lat, self.lon, self.co2_ppm, self.co_ppm, self.ch4_ppm];
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(Error::Encoding("telemetry fields must be finite".into()));
        }
        let mut out = [0u8; TELEMETRY_LEN];
        for (i, v) in floats.iter().enumerate() {
            out[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
        }
        out[40..48].copy_from_slice(&self.timestamp_ms.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != TELEMETRY_LEN {
            return Err(Error::Decoding(format!(
                "telemetry record must be {TELEMETRY_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let rec = Self {
            lat: f(0),
            lon: f(1),
            co2_ppm: f(2),
            co_ppm: f(3),
            ch4_ppm: f(4),
            timestamp_ms: u64::from_le_bytes(bytes[40..48].try_into().unwrap()),
        };
        if [rec.lat, rec.lon, rec.co2_ppm, rec.co_ppm, rec.ch4_ppm]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Decoding("non-finite telemetry field".into()));
        }
        Ok(rec)
    }
}

/// Published RFC 8439 vectors, checked against this implementation.
pub mod vectors {
    use super::*;

    pub const SUNSCREEN: &[u8] = b"Ladies and Gentlemen of the class of '99: If I could offer you only one tip for the future, sunscreen would be it.";

    pub const BLOCK_2_3_2: [u8; 64] = [
        0x10, 0xf1, 0xe7, 0xe4, 0xd1, 0x3b, 0x59, 0x15, 0x50, 0x0f, 0xdd, 0x1f, 0xa3, 0x20, 0x71, 0xc4,
        0xc7, 0xd1, 0xf4, 0xc7, 0x33, 0xc0, 0x68, 0x03, 0x04, 0x22, 0xaa, 0x9a, 0xc3, 0xd4, 0x6c, 0x4e,
        0xd2, 0x82, 0x64, 0x46, 0x07, 0x9f, 0xaa, 0x09, 0x14, 0xc2, 0xd7, 0x05, 0xd9, 0x8b, 0x02, 0xa2,
        0xb5, 0x12, 0x9c, 0xd1, 0xde, 0x16, 0x4e, 0xb9, 0xcb, 0xd0, 0x83, 0xe8, 0xa2, 0x50, 0x3c, 0x4e,
    ];

    pub const CIPHERTEXT_2_4_2: [u8; 114] = [
        0x6e, 0x2e, 0x35, 0x9a, 0x25, 0x68, 0xf9, 0x80, 0x41, 0xba, 0x07, 0x28, 0xdd, 0x0d, 0x69, 0x81,
        0xe9, 0x7e, 0x7a, 0xec, 0x1d, 0x43, 0x60, 0xc2, 0x0a, 0x27, 0xaf, 0xcc, 0xfd, 0x9f, 0xae, 0x0b,
        0xf9, 0x1b, 0x65, 0xc5, 0x52, 0x47, 0x33, 0xab, 0x8f, 0x59, 0x3d, 0xab, 0xcd, 0x62, 0xb3, 0x57,
        0x16, 0x39, 0xd6, 0x24, 0xe6, 0x51, 0x52, 0xab, 0x8f, 0x53, 0x0c, 0x35, 0x9f, 0x08, 0x61, 0xd8,
        0x07, 0xca, 0x0d, 0xbf, 0x50, 0x0d, 0x6a, 0x61, 0x56, 0xa3, 0x8e, 0x08, 0x8a, 0x22, 0xb6, 0x5e,
        0x52, 0xbc, 0x51, 0x4d, 0x16, 0xcc, 0xf8, 0x06, 0x81, 0x8c, 0xe9, 0x1a, 0xb7, 0x79, 0x37, 0x36,
        0x5a, 0xf9, 0x0b, 0xbf, 0x74, 0xa3, 0x5b, 0xe6, 0xb4, 0x0b, 0x8e, 0xed, 0xf2, 0x78, 0x5e, 0x42,
        0x87, 0x4d,
    ];

    /// Appendix A.1 test vector #1: all-zero key and nonce, counter 0.
    pub const BLOCK_A1_1: [u8; 64] = [
        0x76, 0xb8, 0xe0, 0xad, 0xa0, 0xf1, 0x3d, 0x90, 0x40, 0x5d, 0x6a, 0xe5, 0x53, 0x86, 0xbd, 0x28,
        0xbd, 0xd2, 0x19, 0xb8, 0xa0, 0x8d, 0xed, 0x1a, 0xa8, 0x36, 0xef, 0xcc, 0x8b, 0x77, 0x0d, 0xc7,
        0xda, 0x41, 0x59, 0x7c, 0x51, 0x57, 0x48, 0x8d, 0x77, 0x24, 0xe0, 0x3f, 0xb8, 0xd8, 0x4a, 0x37,
        0x6a, 0x43, 0xb8, 0xf4, 0x15, 0x18, 0xa1, 0x1c, 0xc3, 0x87, 0xb6, 0x69, 0xb2, 0xee, 0x65, 0x86,
    ];

    pub fn sequential_key() -> [u8; KEY_LEN] {
        std::array::from_fn(|i| i as u8)
    }

    /// Runs every vector; returns `(name, passed)` pairs.
    pub fn check_all() -> Vec<(&'static str, bool)> {
        let key = sequential_key();
        let block_nonce = [0, 0, 0, 0x09, 0, 0, 0, 0x4a, 0, 0, 0, 0];
        let enc_nonce = [0, 0, 0, 0, 0, 0, 0, 0x4a, 0, 0, 0, 0];

        let block_ok = chacha20_block(&key, 1, &block_nonce) == BLOCK_2_3_2;
        let zero_ok = chacha20_block(&[0; KEY_LEN], 0, &[0; NONCE_LEN]) == BLOCK_A1_1;

        let ck = ChaChaKey::new(key, enc_nonce);
        let frame = NonceLedger::new().encrypt(&ck, SUNSCREEN);
        let enc_ok = matches!(&frame, Ok(f) if f.ciphertext == CIPHERTEXT_2_4_2);
        let dec_ok = frame
            .and_then(|f| decrypt(&ck, &f))
            .map(|p| p == SUNSCREEN)
            .unwrap_or(false);

        vec![
            ("rfc8439 2.3.2 block function", block_ok),
            ("rfc8439 A.1 #1 zero-key block", zero_ok),
            ("rfc8439 2.4.2 encryption", enc_ok),
            ("rfc8439 2.4.2 decryption", dec_ok),
        ]
    }
}
