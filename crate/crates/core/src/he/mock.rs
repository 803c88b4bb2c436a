//! Noise-model backend: plaintext slots plus injected gaussian noise, with the
//! same level, scale and bound bookkeeping as the lattice backend.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::backend::{HeBackend, OpKind, OpStats};
use super::noise::{SlotBounds, Tracker};
use super::{rotation_steps, HeError, HeParams};
use crate::wire::{Reader, WireError, Writer};

const CT_TAG: u8 = 0xC2;

/// Injected noise has standard deviation `bound / NOISE_RATIO`, matching the
/// ratio between the lattice bounds and the per-component error they cover.
/// Fresh and rescale bounds are dominated by ring-product terms.
const NOISE_RATIO: f64 = 15.556_349_186_104_047; // 11 * sqrt(2)

#[derive(Clone, PartialEq)]
pub struct MockCiphertext {
    pub slots: Vec<f64>,
    pub level: usize,
    pub scale: f64,
    pub noise_estimate: f64,
    pub bounds: SlotBounds,
    seed: u64,
}

impl fmt::Debug for MockCiphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockCiphertext")
            .field("level", &self.level)
            .field("noise_estimate", &self.noise_estimate)
            .finish()
    }
}

/// The mock has no secret; decryption still requires this token so call sites
/// stay identical to the lattice backend.
#[derive(Debug, Clone, Copy)]
pub struct MockSecretKey;

#[derive(Clone)]
pub struct Mock {
    tracker: Arc<Tracker>,
    stats: OpStats,
}

impl fmt::Debug for Mock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mock").field("params", &self.tracker.params).finish()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combination of the inputs
    let mut z = a ^ b.rotate_left(29) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Mock {
    pub fn new(params: &HeParams) -> Self {
        Self {
            tracker: Arc::new(Tracker::new(params)),
            stats: OpStats::default(),
        }
    }

    fn perturb(slots: &mut [f64], seed: u64, bound: f64) {
        if bound <= 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, bound / NOISE_RATIO).unwrap();
        for s in slots {
            *s += normal.sample(&mut rng);
        }
    }

    fn check_mul_level(level: usize) -> Result<(), HeError> {
        if level == 0 {
            Err(HeError::DepthExhausted)
        } else {
            Ok(())
        }
    }

    fn padded(&self, values: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.tracker.slots()];
        v[..values.len()].copy_from_slice(values);
        v
    }

    fn make(&self, slots: Vec<f64>, level: usize, bounds: SlotBounds, inputs: &[&MockCiphertext], tag: u64) -> MockCiphertext {
        let seed = inputs.iter().fold(tag, |acc, c| mix(acc, c.seed));
        let est: Vec<f64> = inputs.iter().map(|c| c.noise_estimate).collect();
        MockCiphertext {
            slots,
            level,
            scale: self.tracker.params.scale_at(level),
            noise_estimate: Tracker::estimate(&bounds, &est),
            bounds,
            seed,
        }
    }
}

impl HeBackend for Mock {
    type Ciphertext = MockCiphertext;
    type SecretKey = MockSecretKey;

    fn keygen<R: RngCore + ?Sized>(params: &HeParams, _rng: &mut R) -> (Self, MockSecretKey) {
        (Self::new(params), MockSecretKey)
    }

    fn name(&self) -> &'static str {
        "mock"
    }

    fn params(&self) -> &HeParams {
        &self.tracker.params
    }

    fn stats(&self) -> &OpStats {
        &self.stats
    }

    fn fork(&self) -> Self {
        Self {
            tracker: self.tracker.clone(),
            stats: OpStats::default(),
        }
    }

    fn export_public(&self) -> Vec<u8> {
        Vec::new()
    }

    fn import_public(params: &HeParams, bytes: &[u8]) -> Result<Self, HeError> {
        if !bytes.is_empty() {
            return Err(WireError::Trailing(bytes.len()).into());
        }
        Ok(Self::new(params))
    }

    fn encrypt<R: RngCore + ?Sized>(&self, values: &[f64], level: usize, rng: &mut R) -> Result<MockCiphertext, HeError> {
        let start = Instant::now();
        self.tracker.check_values(values)?;
        self.tracker.check_level(level)?;
        let bound = self.tracker.params.slot_bound();
        if let Some(v) = values.iter().find(|v| !(v.abs() <= bound)) {
            return Err(HeError::EncodingOverflow(format!("slot value {v} exceeds bound {bound}")));
        }
        let seed = rng.next_u64();
        let mut slots = self.padded(values);
        let bounds = self.tracker.fresh(values, level);
        Self::perturb(&mut slots, seed, self.tracker.model.fresh(self.tracker.params.scale_at(level)));
        self.stats.record(OpKind::Encrypt, start.elapsed().as_nanos() as u64);
        Ok(MockCiphertext {
            slots,
            level,
            scale: self.tracker.params.scale_at(level),
            noise_estimate: bounds.max_noise(),
            bounds,
            seed,
        })
    }

    fn decrypt(&self, _sk: &MockSecretKey, ct: &MockCiphertext) -> Result<Vec<f64>, HeError> {
        self.stats.time(OpKind::Decrypt, || Ok(ct.slots.clone()))
    }

    fn level(&self, ct: &MockCiphertext) -> usize {
        ct.level
    }

    fn scale(&self, ct: &MockCiphertext) -> f64 {
        ct.scale
    }

    fn noise_estimate(&self, ct: &MockCiphertext) -> f64 {
        ct.noise_estimate
    }

    fn bounds<'a>(&self, ct: &'a MockCiphertext) -> &'a SlotBounds {
        &ct.bounds
    }

    fn add(&self, a: &MockCiphertext, b: &MockCiphertext) -> Result<MockCiphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            self.tracker.check_pair(a.level, a.scale, b.level, b.scale)?;
            let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x + y).collect();
            Ok(self.make(slots, a.level, a.bounds.add(&b.bounds), &[a, b], 1))
        })
    }

    fn sub(&self, a: &MockCiphertext, b: &MockCiphertext) -> Result<MockCiphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            self.tracker.check_pair(a.level, a.scale, b.level, b.scale)?;
            let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x - y).collect();
            Ok(self.make(slots, a.level, a.bounds.add(&b.bounds), &[a, b], 2))
        })
    }

    fn mul(&self, a: &MockCiphertext, b: &MockCiphertext) -> Result<MockCiphertext, HeError> {
        self.stats.time(OpKind::Mul, || {
            self.tracker.check_pair(a.level, a.scale, b.level, b.scale)?;
            Self::check_mul_level(a.level)?;
            let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect();
            let bounds = self.tracker.mul(&a.bounds, &b.bounds, a.level);
            let mut out = self.make(slots, a.level - 1, bounds, &[a, b], 3);
            let s = self.tracker.params.scale_at(a.level);
            let fresh = self.tracker.model.key_switch(a.level, s * s)
                + self.tracker.model.rescale(self.tracker.params.scale_at(a.level - 1));
            Self::perturb(&mut out.slots, out.seed, fresh);
            Ok(out)
        })
    }

    fn mul_plain(&self, a: &MockCiphertext, values: &[f64]) -> Result<MockCiphertext, HeError> {
        self.stats.time(OpKind::MulPlain, || {
            self.tracker.check_values(values)?;
            Self::check_mul_level(a.level)?;
            let p = self.padded(values);
            let slots = a.slots.iter().zip(&p).map(|(x, y)| x * y).collect();
            let bounds = self.tracker.mul_plain(&a.bounds, values, a.level);
            let mut out = self.make(slots, a.level - 1, bounds, &[a], 4);
            Self::perturb(
                &mut out.slots,
                out.seed,
                self.tracker.model.rescale(self.tracker.params.scale_at(a.level - 1)),
            );
            Ok(out)
        })
    }

    fn mul_const(&self, a: &MockCiphertext, c: f64) -> Result<MockCiphertext, HeError> {
        self.stats.time(OpKind::MulPlain, || {
            Self::check_mul_level(a.level)?;
            let (_, eff) = self.tracker.const_int(c, a.level);
            let slots = a.slots.iter().map(|x| x * eff).collect();
            let bounds = self.tracker.mul_const(&a.bounds, c, eff, a.level);
            let mut out = self.make(slots, a.level - 1, bounds, &[a], 5);
            Self::perturb(
                &mut out.slots,
                out.seed,
                self.tracker.model.rescale(self.tracker.params.scale_at(a.level - 1)),
            );
            Ok(out)
        })
    }

    fn add_plain(&self, a: &MockCiphertext, values: &[f64]) -> Result<MockCiphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            self.tracker.check_values(values)?;
            let p = self.padded(values);
            let slots = a.slots.iter().zip(&p).map(|(x, y)| x + y).collect();
            let bounds = self.tracker.add_plain(&a.bounds, values, a.level);
            Ok(self.make(slots, a.level, bounds, &[a], 6))
        })
    }

    fn add_const(&self, a: &MockCiphertext, c: f64) -> Result<MockCiphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            let (_, eff) = self.tracker.const_int(c, a.level);
            let slots = a.slots.iter().map(|x| x + eff).collect();
            let bounds = self.tracker.add_const(&a.bounds, c, eff);
            Ok(self.make(slots, a.level, bounds, &[a], 7))
        })
    }

    fn rotate(&self, a: &MockCiphertext, k: isize) -> Result<MockCiphertext, HeError> {
        let mut out = a.clone();
        let s = self.tracker.slots() as isize;
        for step in rotation_steps(k, self.tracker.slots()) {
            out = self.stats.time(OpKind::Rotate, || {
                let slots = (0..s).map(|j| out.slots[(j + step).rem_euclid(s) as usize]).collect();
                let bounds = self.tracker.rotate_step(&out.bounds, step, out.level);
                let mut next = self.make(slots, out.level, bounds, &[&out], (step as u64).wrapping_add(8));
                let fresh = self.tracker.model.key_switch(out.level, out.scale);
                Self::perturb(&mut next.slots, next.seed, fresh);
                next
            });
        }
        Ok(out)
    }

    fn adjust_to(&self, a: &MockCiphertext, level: usize, factor: f64) -> Result<MockCiphertext, HeError> {
        if level == a.level && factor == 1.0 {
            return Ok(a.clone());
        }
        if level >= a.level {
            return Err(HeError::BadTarget { from: a.level, to: level });
        }
        self.stats.time(OpKind::MulPlain, || {
            let (_, eff) = self.tracker.adjust_int(a.level, level, factor);
            let slots = a.slots.iter().map(|x| x * eff).collect();
            let bounds = self.tracker.adjust(&a.bounds, level, factor, eff);
            let mut out = self.make(slots, level, bounds, &[a], 9);
            Self::perturb(&mut out.slots, out.seed, self.tracker.model.rescale(self.tracker.params.scale_at(level)));
            Ok(out)
        })
    }

    fn to_bytes(&self, ct: &MockCiphertext) -> Vec<u8> {
        let mut w = Writer::with_capacity(64 + 8 * ct.slots.len());
        w.u8(CT_TAG)
            .u32(ct.level as u32)
            .f64(ct.scale)
            .f64(ct.noise_estimate)
            .f64(ct.bounds.max_noise())
            .f64(ct.bounds.max_magnitude())
            .u64(ct.seed)
            .f64_slice(&ct.slots);
        w.finish()
    }

    fn from_bytes(&self, bytes: &[u8]) -> Result<MockCiphertext, HeError> {
        let mut r = Reader::new(bytes);
        let tag = r.u8()?;
        if tag != CT_TAG {
            return Err(WireError::invalid("ciphertext tag", format!("{tag:#x}")).into());
        }
        let level = r.u32()? as usize;
        let scale = r.f64()?;
        let noise_estimate = r.f64()?;
        let noise = r.f64()?;
        let magnitude = r.f64()?;
        let seed = r.u64()?;
        let slots = r.f64_vec()?;
        r.finish()?;
        if slots.len() != self.tracker.slots() {
            return Err(WireError::invalid("ciphertext", format!("{} slots", slots.len())).into());
        }
        self.tracker.check_level(level)?;
        Ok(MockCiphertext {
            slots,
            level,
            scale,
            noise_estimate,
            bounds: SlotBounds::uniform(self.tracker.slots(), noise, magnitude),
            seed,
        })
    }
}
