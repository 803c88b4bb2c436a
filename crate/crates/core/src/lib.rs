//! Bootstrap-free distributed training of linear models over leveled
//! approximate homomorphic encryption.
//!
//! Workers run a few encrypted gradient steps on their shard and hand the
//! parameter ciphertext back to a key-holding server, which decrypts,
//! averages and re-encrypts it at full level. The refresh replaces
//! bootstrapping, so a shallow modulus chain suffices.

pub mod approx;
pub mod arith;
pub mod data;
pub mod engine;
pub mod he;
pub mod packing;
pub mod ring;
pub mod transport;
pub mod wire;

pub use approx::{LossKind, PolyApprox};
pub use data::Dataset;
pub use engine::{TrainConfig, RunMetrics};
pub use he::{HeBackend, HeParams, Lattice, Mock};
pub use packing::PackLayout;

/// Gradient polynomial over `f64`.
pub type Poly = PolyApprox<f64>;
/// Gradient polynomial over `f32`.
pub type Poly32 = PolyApprox<f32>;
