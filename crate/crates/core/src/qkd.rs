//! BB84 key exchange simulated at the level of measurement statistics, with
//! an optional intercept-resend eavesdropper and a one-time pad over the
//! resulting key.
//!
//! A measurement in the preparation basis returns the prepared bit; a
//! measurement in the conjugate basis returns a fair coin. These are exactly
//! the outcome statistics of the four BB84 states, so no amplitudes are
//! tracked.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MIN_QUBITS: usize = 64;
pub const DEFAULT_ABORT_THRESHOLD: f64 = 0.11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Basis {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            Basis::Diagonal
        } else {
            Basis::Rectilinear
        }
    }
}

/// Alice's prepared qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitFrame {
    pub bits: Vec<bool>,
    pub bases: Vec<Basis>,
}

impl QubitFrame {
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut bits = Vec::with_capacity(n);
        let mut bases = Vec::with_capacity(n);
        for _ in 0..n {
            bits.push(rng.random_bool(0.5));
            bases.push(Basis::random(rng));
        }
        Self { bits, bases }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftedKey {
    pub bits: Vec<bool>,
    /// Raw qubit positions the bits came from, strictly increasing.
    pub source_indices: Vec<usize>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberEstimate {
    pub errors: usize,
    pub total: usize,
    pub ratio: f64,
}

impl QberEstimate {
    pub fn new(errors: usize, total: usize) -> Result<Self> {
        if errors > total {
            return Err(invalid("error count exceeds sample size"));
        }
        Ok(Self {
            errors,
            total,
            ratio: qber(errors, total)?,
        })
    }
}

pub fn qber(errors: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(invalid("QBER needs at least one compared bit"));
    }
    Ok(errors as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvePolicy {
    pub intercept_fraction: f64,
}

impl EvePolicy {
    pub fn new(intercept_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&intercept_fraction) {
            return Err(invalid("intercept fraction must be in [0, 1]"));
        }
        Ok(Self { intercept_fraction })
    }

    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct Bb84Outcome {
    pub alice_key: SiftedKey,
    pub bob_key: SiftedKey,
    pub estimate: QberEstimate,
    /// Positions where Alice's and Bob's bases matched, ascending.
    pub sifted_indices: Vec<usize>,
    /// Positions sacrificed for the QBER estimate, ascending.
    pub sacrificed_indices: Vec<usize>,
    pub sent: QubitFrame,
    pub bob_bases: Vec<Basis>,
    pub bob_bits: Vec<bool>,
    /// Eve's measured bit per raw position; `None` where she did not intercept.
    pub eve_records: Vec<Option<bool>>,
}

impl Bb84Outcome {
    pub fn raw_len(&self) -> usize {
        self.sent.len()
    }

    pub fn sifted_fraction(&self) -> f64 {
        self.sifted_indices.len() as f64 / self.raw_len() as f64
    }

    /// Eve's leakage estimate over every sifted position.
    pub fn eve_information(&self) -> f64 {
        let alice: Vec<bool> = self.sifted_indices.iter().map(|&i| self.sent.bits[i]).collect();
        let eve: Vec<Option<bool>> = self.sifted_indices.iter().map(|&i| self.eve_records[i]).collect();
        eve_information(&alice, &eve)
    }
}

fn measure<R: Rng + ?Sized>(bit: bool, prepared: Basis, measured: Basis, rng: &mut R) -> bool {
    if prepared == measured {
        bit
    } else {
        rng.random_bool(0.5)
    }
}

/// One BB84 run: preparation, optional intercept-resend, noisy channel,
/// measurement, sifting, and sacrifice of half the sifted bits for QBER.
pub fn bb84_exchange<R: Rng + ?Sized>(
    n_qubits: usize,
    eve: &EvePolicy,
    channel_flip_prob: f64,
    rng: &mut R,
) -> Result<Bb84Outcome> {
    if n_qubits < MIN_QUBITS {
        return Err(invalid(format!(
            "need at least {MIN_QUBITS} qubits for a usable QBER estimate, got {n_qubits}"
        )));
    }
    if !(0.0..=1.0).contains(&channel_flip_prob) {
        return Err(invalid("channel flip probability must be in [0, 1]"));
    }
    let eve = EvePolicy::new(eve.intercept_fraction)?;

    let sent = QubitFrame::random(n_qubits, rng);
    let mut eve_records = Vec::with_capacity(n_qubits);
    let mut bob_bases = Vec::with_capacity(n_qubits);
    let mut bob_bits = Vec::with_capacity(n_qubits);

    for i in 0..n_qubits {
        let (mut bit, mut basis) = (sent.bits[i], sent.bases[i]);

        let intercepted = eve.intercept_fraction > 0.0 && rng.random_bool(eve.intercept_fraction);
        if intercepted {
            let eve_basis = Basis::random(rng);
            let eve_bit = measure(bit, basis, eve_basis, rng);
            eve_records.push(Some(eve_bit));
            bit = eve_bit;
            basis = eve_basis;
        } else {
            eve_records.push(None);
        }

        if channel_flip_prob > 0.0 && rng.random_bool(channel_flip_prob) {
            bit = !bit;
        }

        let bob_basis = Basis::random(rng);
        bob_bits.push(measure(bit, basis, bob_basis, rng));
        bob_bases.push(bob_basis);
    }

    let sifted_indices: Vec<usize> = (0..n_qubits)
        .filter(|&i| sent.bases[i] == bob_bases[i])
        .collect();

    let mut shuffled = sifted_indices.clone();
    shuffled.shuffle(rng);
    let n_check = shuffled.len() / 2;
    let mut sacrificed_indices = shuffled[..n_check].to_vec();
    let mut key_indices = shuffled[n_check..].to_vec();
    sacrificed_indices.sort_unstable();
    key_indices.sort_unstable();

    if sacrificed_indices.is_empty() {
        return Err(Error::InvalidState("no sifted bits left to estimate QBER".into()));
    }
    let errors = sacrificed_indices
        .iter()
        .filter(|&&i| sent.bits[i] != bob_bits[i])
        .count();
    let estimate = QberEstimate::new(errors, sacrificed_indices.len())?;

    let alice_key = SiftedKey {
        bits: key_indices.iter().map(|&i| sent.bits[i]).collect(),
        source_indices: key_indices.clone(),
    };
    let bob_key = SiftedKey {
        bits: key_indices.iter().map(|&i| bob_bits[i]).collect(),
        source_indices: key_indices,
    };

    Ok(Bb84Outcome {
        alice_key,
        bob_key,
        estimate,
        sifted_indices,
        sacrificed_indices,
        sent,
        bob_bases,
        bob_bits,
        eve_records,
    })
}

fn entropy_term(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Plug-in mutual information, in bits, between Alice's bits and Eve's
/// records at the same positions. A `None` record is its own symbol,
/// carrying no information about Alice's bit.
pub fn eve_information(alice_bits: &[bool], eve_records: &[Option<bool>]) -> f64 {
    let n = alice_bits.len().min(eve_records.len());
    if n == 0 {
        return 0.0;
    }
    // joint[a][e], e: 0 -> Some(false), 1 -> Some(true), 2 -> None
    let mut joint = [[0usize; 3]; 2];
    for (a, e) in alice_bits.iter().zip(eve_records.iter()) {
        let col = match e {
            Some(false) => 0,
            Some(true) => 1,
            None => 2,
        };
        joint[*a as usize][col] += 1;
    }
    let total = n as f64;
    let pa: Vec<f64> = joint.iter().map(|row| row.iter().sum::<usize>() as f64 / total).collect();
    let pe: Vec<f64> = (0..3)
        .map(|c| (joint[0][c] + joint[1][c]) as f64 / total)
        .collect();
    let mut mi = 0.0;
    for a in 0..2 {
        for e in 0..3 {
            let pj = joint[a][e] as f64 / total;
            if pj > 0.0 {
                mi += pj * (pj / (pa[a] * pe[e])).log2();
            }
        }
    }
    let h_alice: f64 = pa.iter().map(|&p| entropy_term(p)).sum();
    mi.clamp(0.0, h_alice.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateDecision {
    Accept,
    Abort,
}

pub fn keygate(estimate: &QberEstimate, abort_threshold: f64) -> GateDecision {
    if estimate.ratio > abort_threshold {
        GateDecision::Abort
    } else {
        GateDecision::Accept
    }
}

/// Error correction and privacy amplification collapsed into one step:
/// `ceil(2 * QBER * len)` leading key bits are revealed and dropped, and
/// Bob's remaining bits are corrected to Alice's.
pub fn reconcile(outcome: &Bb84Outcome) -> (Vec<bool>, Vec<bool>) {
    let len = outcome.alice_key.len();
    let discard = if outcome.estimate.ratio > 0.0 {
        ((2.0 * outcome.estimate.ratio * len as f64).ceil() as usize).min(len)
    } else {
        0
    };
    let alice = outcome.alice_key.bits[discard..].to_vec();
    (alice.clone(), alice)
}

/// Key bits with a consumption cursor. Bits are never handed out twice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    bits: Vec<bool>,
    consumed: usize,
}

impl KeyMaterial {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits, consumed: 0 }
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self::from_bits(
            bytes
                .iter()
                .flat_map(|b| (0..8).rev().map(move |k| (b >> k) & 1 == 1))
                .collect(),
        )
    }

    pub fn len_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn available(&self) -> usize {
        self.bits.len() - self.consumed
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Takes the next `n_bytes * 8` bits packed MSB-first.
    pub fn take_bytes(&mut self, n_bytes: usize) -> Result<Vec<u8>> {
        let needed = n_bytes * 8;
        if needed > self.available() {
            return Err(Error::KeyExhausted {
                needed,
                available: self.available(),
            });
        }
        let out = pack_bits(&self.bits[self.consumed..self.consumed + needed]);
        self.consumed += needed;
        Ok(out)
    }
}

/// Packs bits MSB-first; a trailing partial byte is zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | ((b as u8) << (7 - k))))
        .collect()
}

/// `message XOR key`, with the key at least as long as the message.
pub fn otp_xor(message: &[u8], key: &[u8]) -> Result<Vec<u8>> {
    if key.len() < message.len() {
        return Err(Error::KeyExhausted {
            needed: message.len() * 8,
            available: key.len() * 8,
        });
    }
    Ok(message.iter().zip(key).map(|(m, k)| m ^ k).collect())
}

pub fn otp_encrypt(message: &[u8], key: &mut KeyMaterial) -> Result<Vec<u8>> {
    let pad = key.take_bytes(message.len())?;
    otp_xor(message, &pad)
}

pub fn otp_decrypt(ciphertext: &[u8], key: &mut KeyMaterial) -> Result<Vec<u8>> {
    otp_encrypt(ciphertext, key)
}
