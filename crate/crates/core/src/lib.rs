//! Deterministic simulator for gas-contamination survey robots that report
//! over an encrypted local channel and train a shared classifier with
//! federated averaging, exchanging weights under simulated BB84 keys.

// NaN-rejecting guards read better as `!(x > 0.0)` than via partial_cmp.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chacha;
pub mod coverage;
pub mod envsim;
pub mod error;
pub mod events;
pub mod fedlearn;
pub mod orchestrator;
pub mod qkd;
pub mod robot;

pub use error::{Error, Result};
