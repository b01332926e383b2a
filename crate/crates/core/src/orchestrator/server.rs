use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{KeyMode, QkdConfig};
use crate::chacha::{self, make_nonce, ChaChaKey, CipherFrame, NonceLedger, TelemetryRecord, KEY_LEN};
use crate::error::{Error, Result};
use crate::fedlearn::{deserialize_weights, serialize_weights, LocalUpdate, ModelWeights};
use crate::qkd::{self, bb84_exchange, keygate, otp_decrypt, otp_encrypt, EvePolicy, GateDecision, KeyMaterial};
use crate::robot::report_hash;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub receive_time: f64,
    pub robot_id: u32,
    pub record: TelemetryRecord,
    pub report_hash: u64,
    pub ack_sent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub receive_time: f64,
    pub robot_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalServerLog {
    pub records: Vec<LogRecord>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Ack { robot_id: u32, report_hash: u64 },
    Nack { robot_id: u32 },
}

/// Per-plant receiver of encrypted contamination telemetry.
#[derive(Debug, Default)]
pub struct LocalServer {
    pub log: LocalServerLog,
    seen: BTreeSet<(u32, u64)>,
}

impl LocalServer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Decrypts, decodes and logs one frame. Retransmissions of a logged
    /// report are acknowledged again without a second log entry.
    pub fn receive(&mut self, frame_bytes: &[u8], robot_id: u32, session_key: &[u8; KEY_LEN], now: f64) -> Response {
        let plaintext = CipherFrame::from_bytes(frame_bytes)
            .and_then(|frame| chacha::decrypt(&ChaChaKey::new(*session_key, frame.nonce), &frame));
        let record = plaintext.and_then(|p| TelemetryRecord::decode(&p).map(|r| (r, p)));
        match record {
            Ok((record, bytes)) => {
                let hash = report_hash(&bytes);
                if self.seen.insert((robot_id, hash)) {
                    self.log.records.push(LogRecord {
                        receive_time: now,
                        robot_id,
                        record,
                        report_hash: hash,
                        ack_sent: true,
                    });
                }
                Response::Ack {
                    robot_id,
                    report_hash: hash,
                }
            }
            Err(e) => {
                self.log.rejected.push(Rejection {
                    receive_time: now,
                    robot_id,
                    reason: e.to_string(),
                });
                Response::Nack { robot_id }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub qber: f64,
    pub decision: GateDecision,
    pub sifted_len: usize,
    pub key_bits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransferOutcome {
    Delivered {
        weights: ModelWeights,
        bytes: usize,
        attempts: Vec<AttemptRecord>,
    },
    Dropped {
        attempts: Vec<AttemptRecord>,
    },
}

impl TransferOutcome {
    pub fn attempts(&self) -> &[AttemptRecord] {
        match self {
            TransferOutcome::Delivered { attempts, .. } | TransferOutcome::Dropped { attempts } => attempts,
        }
    }

    pub fn delivered(&self) -> Option<&ModelWeights> {
        match self {
            TransferOutcome::Delivered { weights, .. } => Some(weights),
            TransferOutcome::Dropped { .. } => None,
        }
    }
}

/// Smallest qubit count expected to yield `bits` key bits after sifting,
/// sacrifice and reconciliation at the abort threshold, with 10% headroom.
pub fn required_qubits(bits: usize, abort_threshold: f64) -> usize {
    let usable = (1.0 - 2.0 * abort_threshold).max(0.05);
    ((bits as f64) * 4.0 * 1.1 / usable).ceil() as usize
}

/// Uploads one local update to the global server under a fresh BB84 key.
/// Aborted exchanges are retried up to `max_attempts` times.
pub fn global_exchange<R: Rng + ?Sized>(
    update: &LocalUpdate,
    cfg: &QkdConfig,
    rng: &mut R,
) -> Result<TransferOutcome> {
    let payload = serialize_weights(&update.weights)?;
    let eve = EvePolicy::new(cfg.eve_fraction)?;
    let mut attempts = Vec::new();

    for _ in 0..cfg.max_attempts {
        let outcome = bb84_exchange(cfg.n_qubits, &eve, cfg.channel_flip_prob, rng)?;
        let decision = keygate(&outcome.estimate, cfg.abort_threshold);
        let (alice_bits, bob_bits) = if decision == GateDecision::Accept {
            qkd::reconcile(&outcome)
        } else {
            (Vec::new(), Vec::new())
        };
        attempts.push(AttemptRecord {
            qber: outcome.estimate.ratio,
            decision,
            sifted_len: outcome.sifted_indices.len(),
            key_bits: alice_bits.len(),
        });
        if decision == GateDecision::Abort {
            continue;
        }

        let received = match cfg.key_mode {
            KeyMode::Otp => {
                let needed = payload.len() * 8;
                if alice_bits.len() < needed {
                    return Err(Error::Config(format!(
                        "one-time pad needs {needed} key bits but the exchange yielded {}; \
                         set qkd.n_qubits to at least {}",
                        alice_bits.len(),
                        required_qubits(needed, cfg.abort_threshold)
                    )));
                }
                let mut sender = KeyMaterial::from_bits(alice_bits);
                let mut receiver = KeyMaterial::from_bits(bob_bits);
                let ciphertext = otp_encrypt(&payload, &mut sender)?;
                otp_decrypt(&ciphertext, &mut receiver)?
            }
            KeyMode::DeriveChacha => {
                if alice_bits.len() < 256 {
                    return Err(Error::Config(format!(
                        "derived ChaCha key needs 256 key bits but the exchange yielded {}; \
                         set qkd.n_qubits to at least {}",
                        alice_bits.len(),
                        required_qubits(256, cfg.abort_threshold)
                    )));
                }
                let derive = |bits: &[bool]| -> [u8; KEY_LEN] { Sha256::digest(qkd::pack_bits(&bits[..256])).into() };
                let nonce = make_nonce(update.robot_id, update.session_index as u64);
                let frame = NonceLedger::new().encrypt(&ChaChaKey::new(derive(&alice_bits), nonce), &payload)?;
                chacha::decrypt(&ChaChaKey::new(derive(&bob_bits), nonce), &frame)?
            }
        };
        let mut weights = deserialize_weights(&received)?;
        weights.version = update.weights.version;
        return Ok(TransferOutcome::Delivered {
            weights,
            bytes: payload.len(),
            attempts,
        });
    }
    Ok(TransferOutcome::Dropped { attempts })
}
