//! Leveled approximate-arithmetic homomorphic encryption (CKKS-style, no
//! bootstrap).
//!
//! Two interchangeable backends implement [`HeBackend`]: [`Lattice`], the
//! RLWE scheme proper, and [`Mock`], which keeps plaintext slots plus injected
//! noise with identical level and noise bookkeeping.
//!
//! This is a research artifact. Parameters target functional correctness and
//! the implementation is not constant time; do not use it to protect real data.

mod backend;
mod encoder;
mod keys;
mod lattice;
mod mock;
mod noise;
mod params;

use thiserror::Error;

use crate::ring::{RingError, RingPoly};
use crate::wire::WireError;

pub use backend::{HeBackend, OpKind, OpStats, OpSnapshot};
pub use encoder::Encoder;
pub use keys::{KeySet, PublicKey, SecretKey, SwitchKey};
pub use lattice::{Ciphertext, Lattice};
pub use mock::{Mock, MockCiphertext, MockSecretKey};
pub use noise::{NoiseModel, SlotBounds};
pub use params::{HeParams, ParamSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeError {
    #[error("encoding overflow: {0}")]
    EncodingOverflow(String),
    #[error("{got} values exceed the {slots} available slots")]
    TooManySlots { got: usize, slots: usize },
    #[error("level {level} exceeds maximum {max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("depth exhausted: ciphertext at level 0 cannot be multiplied")]
    DepthExhausted,
    #[error("level mismatch: {0} vs {1}")]
    LevelMismatch(usize, usize),
    #[error("scale mismatch ({0} vs {1}): rescale required")]
    ScaleMismatch(f64, f64),
    #[error("no rotation key for galois element {0}")]
    KeyMissing(usize),
    #[error("cannot move from level {from} to level {to}")]
    BadTarget { from: usize, to: usize },
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Encoded (unencrypted) slot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub poly: RingPoly,
    pub scale: f64,
    pub level: usize,
    /// Largest slot magnitude that was encoded.
    pub magnitude: f64,
}

/// Galois element for a left slot rotation by `k` (negative: right).
pub fn galois_element(k: isize, slots: usize) -> usize {
    let two_n = 4 * slots as u64;
    let k = k.rem_euclid(slots as isize) as u64;
    let mut g = 1u64;
    let mut base = 5u64;
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            g = g * base % two_n;
        }
        base = base * base % two_n;
        e >>= 1;
    }
    g as usize
}

/// Splits a left rotation by `k` into the power-of-two steps that have keys.
/// Positive entries rotate left, negative rotate right.
pub fn rotation_steps(k: isize, slots: usize) -> Vec<isize> {
    let k = k.rem_euclid(slots as isize) as usize;
    if k == 0 {
        return vec![];
    }
    let (amount, sign) = if k <= slots / 2 { (k, 1) } else { (slots - k, -1) };
    (0..usize::BITS)
        .filter(|b| amount >> b & 1 == 1)
        .map(|b| sign * (1isize << b))
        .collect()
}

/// Galois elements of every key generated by default: left and right power-of-two
/// rotations.
pub fn default_rotation_elements(slots: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut step = 1isize;
    while (step as usize) < slots {
        for s in [step, -step] {
            let g = galois_element(s, slots);
            if !out.contains(&g) {
                out.push(g);
            }
        }
        step *= 2;
    }
    out
}

#[cfg(test)]
mod tests;
