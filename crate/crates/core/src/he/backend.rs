use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::RngCore;

use super::{HeError, HeParams, SlotBounds};

/// Operation categories counted by [`OpStats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Encrypt,
    Decrypt,
    /// Ciphertext or plaintext additions and subtractions.
    Add,
    /// Ciphertext-ciphertext multiplication with relinearization and rescale.
    Mul,
    /// Plaintext or constant multiplication with rescale, including level adjustment.
    MulPlain,
    /// One key-switched power-of-two rotation.
    Rotate,
    Refresh,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::Encrypt,
        OpKind::Decrypt,
        OpKind::Add,
        OpKind::Mul,
        OpKind::MulPlain,
        OpKind::Rotate,
        OpKind::Refresh,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

const KINDS: usize = OpKind::ALL.len();

/// Shared, thread-safe operation counters and cumulative timings.
#[derive(Clone)]
pub struct OpStats {
    counts: Arc<[AtomicU64; KINDS]>,
    nanos: Arc<[AtomicU64; KINDS]>,
}

impl Default for OpStats {
    fn default() -> Self {
        Self {
            counts: Arc::new(std::array::from_fn(|_| AtomicU64::new(0))),
            nanos: Arc::new(std::array::from_fn(|_| AtomicU64::new(0))),
        }
    }
}

impl fmt::Debug for OpStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.snapshot().fmt(f)
    }
}

impl OpStats {
    pub fn record(&self, kind: OpKind, nanos: u64) {
        self.counts[kind.index()].fetch_add(1, Ordering::Relaxed);
        self.nanos[kind.index()].fetch_add(nanos, Ordering::Relaxed);
    }

    pub fn time<T>(&self, kind: OpKind, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(kind, start.elapsed().as_nanos() as u64);
        out
    }

    pub fn snapshot(&self) -> OpSnapshot {
        OpSnapshot {
            counts: std::array::from_fn(|i| self.counts[i].load(Ordering::Relaxed)),
            nanos: std::array::from_fn(|i| self.nanos[i].load(Ordering::Relaxed)),
        }
    }

    pub fn reset(&self) {
        for i in 0..KINDS {
            self.counts[i].store(0, Ordering::Relaxed);
            self.nanos[i].store(0, Ordering::Relaxed);
        }
    }
}

/// Point-in-time copy of [`OpStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpSnapshot {
    counts: [u64; KINDS],
    nanos: [u64; KINDS],
}

impl OpSnapshot {
    /// Snapshot with counts only (no timings), e.g. as reported by a peer.
    pub fn from_counts(counts: [u64; KINDS]) -> Self {
        Self {
            counts,
            nanos: [0; KINDS],
        }
    }

    /// Counts in [`OpKind::ALL`] order.
    pub fn counts(&self) -> [u64; KINDS] {
        self.counts
    }

    /// The same snapshot without timings.
    pub fn counts_only(&self) -> Self {
        Self::from_counts(self.counts)
    }

    pub fn count(&self, kind: OpKind) -> u64 {
        self.counts[kind.index()]
    }

    pub fn nanos(&self, kind: OpKind) -> u64 {
        self.nanos[kind.index()]
    }

    /// Time spent in homomorphic evaluation (everything but encrypt, decrypt
    /// and refresh).
    pub fn compute_nanos(&self) -> u64 {
        [OpKind::Add, OpKind::Mul, OpKind::MulPlain, OpKind::Rotate]
            .iter()
            .map(|&k| self.nanos(k))
            .sum()
    }

    pub fn total_nanos(&self) -> u64 {
        self.nanos.iter().sum()
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            counts: std::array::from_fn(|i| self.counts[i] + other.counts[i]),
            nanos: std::array::from_fn(|i| self.nanos[i] + other.nanos[i]),
        }
    }

    pub fn since(&self, earlier: &Self) -> Self {
        Self {
            counts: std::array::from_fn(|i| self.counts[i] - earlier.counts[i]),
            nanos: std::array::from_fn(|i| self.nanos[i] - earlier.nanos[i]),
        }
    }

    /// Mean time per operation of `kind` in nanoseconds.
    pub fn mean_nanos(&self, kind: OpKind) -> Option<f64> {
        let c = self.count(kind);
        (c > 0).then(|| self.nanos(kind) as f64 / c as f64)
    }
}

/// Common interface of the lattice scheme and the noise-model mock.
///
/// A backend value holds public material only (parameters and evaluation
/// keys) plus its own operation counters; decryption and refresh take the
/// secret key explicitly. Every ciphertext at level `l` has scale
/// `params().scale_at(l)`.
pub trait HeBackend: Clone + Send + Sync + 'static {
    type Ciphertext: Clone + Send + Sync + fmt::Debug + 'static;
    type SecretKey: Send + Sync + 'static;

    fn keygen<R: RngCore + ?Sized>(params: &HeParams, rng: &mut R) -> (Self, Self::SecretKey);
    fn name(&self) -> &'static str;
    fn params(&self) -> &HeParams;
    fn stats(&self) -> &OpStats;
    /// Same keys with fresh counters.
    fn fork(&self) -> Self;
    /// Public key material for shipping to a worker.
    fn export_public(&self) -> Vec<u8>;
    fn import_public(params: &HeParams, bytes: &[u8]) -> Result<Self, HeError>;

    fn encrypt<R: RngCore + ?Sized>(&self, values: &[f64], level: usize, rng: &mut R) -> Result<Self::Ciphertext, HeError>;
    /// Real parts of all slots.
    fn decrypt(&self, sk: &Self::SecretKey, ct: &Self::Ciphertext) -> Result<Vec<f64>, HeError>;

    fn level(&self, ct: &Self::Ciphertext) -> usize;
    fn scale(&self, ct: &Self::Ciphertext) -> f64;
    /// Tracked upper bound on the slot error; never decreases along a computation.
    fn noise_estimate(&self, ct: &Self::Ciphertext) -> f64;
    fn bounds<'a>(&self, ct: &'a Self::Ciphertext) -> &'a SlotBounds;

    fn add(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext, HeError>;
    fn sub(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext, HeError>;
    /// Multiply, relinearize, rescale: level drops by one.
    fn mul(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext, HeError>;
    /// Slotwise product with plaintext values, then rescale.
    fn mul_plain(&self, a: &Self::Ciphertext, values: &[f64]) -> Result<Self::Ciphertext, HeError>;
    fn mul_const(&self, a: &Self::Ciphertext, c: f64) -> Result<Self::Ciphertext, HeError>;
    fn add_plain(&self, a: &Self::Ciphertext, values: &[f64]) -> Result<Self::Ciphertext, HeError>;
    fn add_const(&self, a: &Self::Ciphertext, c: f64) -> Result<Self::Ciphertext, HeError>;
    /// Left rotation by `k` slots (slot j receives slot j + k); negative rotates right.
    fn rotate(&self, a: &Self::Ciphertext, k: isize) -> Result<Self::Ciphertext, HeError>;
    /// Moves to a lower `level` while multiplying by `factor`; consumes one rescale.
    fn adjust_to(&self, a: &Self::Ciphertext, level: usize, factor: f64) -> Result<Self::Ciphertext, HeError>;

    fn to_bytes(&self, ct: &Self::Ciphertext) -> Vec<u8>;
    fn from_bytes(&self, bytes: &[u8]) -> Result<Self::Ciphertext, HeError>;

    fn drop_to(&self, a: &Self::Ciphertext, level: usize) -> Result<Self::Ciphertext, HeError> {
        self.adjust_to(a, level, 1.0)
    }

    /// Decrypts and re-encrypts at `level`: the key holder's replacement for bootstrap.
    fn refresh<R: RngCore + ?Sized>(
        &self,
        sk: &Self::SecretKey,
        ct: &Self::Ciphertext,
        level: usize,
        rng: &mut R,
    ) -> Result<Self::Ciphertext, HeError> {
        let start = Instant::now();
        let values = self.decrypt(sk, ct)?;
        let out = self.encrypt(&values, level, rng)?;
        self.stats().record(OpKind::Refresh, start.elapsed().as_nanos() as u64);
        Ok(out)
    }

    /// Measured maximum slot error of `ct` against `reference` (zero-padded).
    fn measured_error(&self, sk: &Self::SecretKey, ct: &Self::Ciphertext, reference: &[f64]) -> Result<f64, HeError> {
        let got = self.decrypt(sk, ct)?;
        Ok(got
            .iter()
            .enumerate()
            .map(|(j, g)| (g - reference.get(j).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max))
    }

    /// Per-slot check that the measured error stays within the tracked bounds.
    fn within_bounds(&self, sk: &Self::SecretKey, ct: &Self::Ciphertext, reference: &[f64]) -> Result<bool, HeError> {
        let got = self.decrypt(sk, ct)?;
        let b = self.bounds(ct);
        Ok(got
            .iter()
            .enumerate()
            .all(|(j, g)| (g - reference.get(j).copied().unwrap_or(0.0)).abs() <= b.noise[j]))
    }
}
