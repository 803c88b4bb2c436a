#![allow(dead_code)]

use std::sync::OnceLock;

use dhe_core::he::{HeBackend, HeParams, Lattice, SecretKey};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub mod circuits;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// N = 1024, depth 6 lattice keys.
pub fn toy() -> &'static (Lattice, SecretKey) {
    static CELL: OnceLock<(Lattice, SecretKey)> = OnceLock::new();
    CELL.get_or_init(|| Lattice::keygen(&HeParams::profile("toy", None).unwrap(), &mut rng(1)))
}

/// N = 8192, depth 6 lattice keys.
pub fn distributed() -> &'static (Lattice, SecretKey) {
    static CELL: OnceLock<(Lattice, SecretKey)> = OnceLock::new();
    CELL.get_or_init(|| Lattice::keygen(&HeParams::distributed(), &mut rng(2)))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
