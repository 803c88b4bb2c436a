//! The RLWE backend.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::RngCore;

use super::backend::{HeBackend, OpKind, OpStats};
use super::keys::{keygen, KeySet, KeySwitcher, SecretKey};
use super::noise::{SlotBounds, Tracker};
use super::{default_rotation_elements, galois_element, rotation_steps, Encoder, HeError, HeParams, Plaintext};
use crate::ring::{sample_signed, Distribution, Form, RingContext, RingPoly};
use crate::wire::{Reader, WireError, Writer};

const CT_TAG: u8 = 0xC1;

/// RLWE ciphertext `(c0, c1)` in evaluation form; decrypts as `c0 + c1*s`.
#[derive(Clone, PartialEq)]
pub struct Ciphertext {
    pub c0: RingPoly,
    pub c1: RingPoly,
    pub level: usize,
    pub scale: f64,
    pub noise_estimate: f64,
    pub bounds: SlotBounds,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ciphertext")
            .field("level", &self.level)
            .field("scale", &self.scale)
            .field("noise_estimate", &self.noise_estimate)
            .finish()
    }
}

struct Inner {
    tracker: Tracker,
    encoder: Encoder,
    keys: KeySet,
    switcher: KeySwitcher,
    /// `q_l^-1 mod q_i` for i < l, indexed `[l][i]`.
    q_inv: Vec<Vec<u64>>,
}

/// Lattice backend: parameters, encoder, public evaluation keys and counters.
#[derive(Clone)]
pub struct Lattice {
    inner: Arc<Inner>,
    stats: OpStats,
}

impl fmt::Debug for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lattice")
            .field("params", &self.inner.tracker.params)
            .field("rotation_keys", &self.inner.keys.rot.len())
            .finish()
    }
}

impl Lattice {
    pub fn from_keys(params: &HeParams, keys: KeySet) -> Self {
        let ctx = params.ring();
        let q_inv = (0..=params.max_level())
            .map(|l| {
                let ql = params.prime(l);
                (0..l).map(|i| ctx.modulus(i).inv(ql % ctx.modulus(i).value()).unwrap()).collect()
            })
            .collect();
        Self {
            inner: Arc::new(Inner {
                tracker: Tracker::new(params),
                encoder: Encoder::new(params),
                switcher: KeySwitcher::new(ctx),
                keys,
                q_inv,
            }),
            stats: OpStats::default(),
        }
    }

    /// Key generation with rotation keys for the given Galois elements only.
    pub fn keygen_with_rotations<R: RngCore + ?Sized>(
        params: &HeParams,
        rotations: &[usize],
        rng: &mut R,
    ) -> (Self, SecretKey) {
        let (sk, keys) = keygen(params, rotations, rng);
        (Self::from_keys(params, keys), sk)
    }

    pub fn keys(&self) -> &KeySet {
        &self.inner.keys
    }

    pub fn encoder(&self) -> &Encoder {
        &self.inner.encoder
    }

    fn ctx(&self) -> &RingContext {
        self.inner.tracker.params.ring()
    }

    fn tracker(&self) -> &Tracker {
        &self.inner.tracker
    }

    /// Encrypts an already encoded plaintext.
    pub fn encrypt_plaintext<R: RngCore + ?Sized>(&self, pt: &Plaintext, rng: &mut R) -> Result<Ciphertext, HeError> {
        let ctx = self.ctx();
        let level = pt.level;
        self.tracker().check_level(level)?;
        let n = ctx.degree();
        let sigma = self.tracker().params.sigma();
        let small = |kind, rng: &mut R| -> Result<RingPoly, HeError> {
            Ok(ctx.ntt_forward(&ctx.from_signed(&sample_signed(n, kind, rng), level)?)?)
        };
        let v = small(Distribution::Ternary, rng)?;
        let e0 = small(Distribution::Gaussian(sigma), rng)?;
        let e1 = small(Distribution::Gaussian(sigma), rng)?;
        let pk = &self.inner.keys.pk;
        let b = ctx.drop_to(&pk.b, level)?;
        let a = ctx.drop_to(&pk.a, level)?;
        let mut c0 = ctx.mul_eval(&v, &b)?;
        ctx.add_assign(&mut c0, &e0)?;
        ctx.add_assign(&mut c0, &pt.poly)?;
        let mut c1 = ctx.mul_eval(&v, &a)?;
        ctx.add_assign(&mut c1, &e1)?;
        let noise = self.tracker().model.fresh(pt.scale);
        let mut bounds = SlotBounds::uniform(self.tracker().slots(), noise, 0.0);
        bounds.magnitude = vec![pt.magnitude; self.tracker().slots()];
        Ok(Ciphertext {
            c0,
            c1,
            level,
            scale: pt.scale,
            noise_estimate: noise,
            bounds,
        })
    }

    /// `c0 + c1*s` as a plaintext at the ciphertext's scale.
    pub fn decrypt_plaintext(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext, HeError> {
        let ctx = self.ctx();
        let s = sk.at_level(ctx, ct.level);
        let mut m = ctx.mul_eval(&ct.c1, &s)?;
        ctx.add_assign(&mut m, &ct.c0)?;
        Ok(Plaintext {
            poly: m,
            scale: ct.scale,
            level: ct.level,
            magnitude: ct.bounds.max_magnitude(),
        })
    }

    /// Divides by the last prime with rounding, dropping one level.
    fn rescale(&self, a: &RingPoly) -> RingPoly {
        let ctx = self.ctx();
        let l = a.level();
        debug_assert!(l >= 1 && a.form() == Form::Evaluation);
        let mut last = a.residues(l).to_vec();
        ctx.table(l).inverse(&mut last);
        let ql = ctx.modulus(l);
        let centered: Vec<i64> = last.iter().map(|&x| ql.center(x)).collect();
        let mut out = ctx.drop_last(a).expect("level >= 1");
        let residues = RingContext::residues_mut(&mut out);
        for (i, r) in residues.iter_mut().enumerate() {
            let q = ctx.modulus(i);
            let mut t: Vec<u64> = centered.iter().map(|&c| q.reduce_i64(c)).collect();
            ctx.table(i).forward(&mut t);
            let w = self.inner.q_inv[l][i];
            let ws = q.shoup(w);
            for (x, y) in r.iter_mut().zip(t) {
                *x = q.mul_shoup(q.sub(*x, y), w, ws);
            }
        }
        out
    }

    fn check_mul_level(level: usize) -> Result<(), HeError> {
        if level == 0 {
            Err(HeError::DepthExhausted)
        } else {
            Ok(())
        }
    }

    fn rotate_step(&self, a: &Ciphertext, step: isize) -> Result<Ciphertext, HeError> {
        let ctx = self.ctx();
        let g = galois_element(step, self.tracker().slots());
        let key = self.inner.keys.rot.get(&g).ok_or(HeError::KeyMissing(g))?;
        let c0 = ctx.automorphism(&a.c0, g);
        let c1 = ctx.automorphism(&a.c1, g);
        let (k0, k1) = self.inner.switcher.switch(&c1, key);
        let bounds = self.tracker().rotate_step(&a.bounds, step, a.level);
        Ok(Ciphertext {
            c0: ctx.add(&c0, &k0)?,
            c1: k1,
            level: a.level,
            scale: a.scale,
            noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate]),
            bounds,
        })
    }

    fn scalar_mul_rescale(&self, a: &Ciphertext, c: i128) -> (RingPoly, RingPoly) {
        let ctx = self.ctx();
        let c0 = self.rescale(&ctx.mul_scalar(&a.c0, c));
        let c1 = self.rescale(&ctx.mul_scalar(&a.c1, c));
        (c0, c1)
    }
}

impl HeBackend for Lattice {
    type Ciphertext = Ciphertext;
    type SecretKey = SecretKey;

    fn keygen<R: RngCore + ?Sized>(params: &HeParams, rng: &mut R) -> (Self, SecretKey) {
        Self::keygen_with_rotations(params, &default_rotation_elements(params.slots()), rng)
    }

    fn name(&self) -> &'static str {
        "lattice"
    }

    fn params(&self) -> &HeParams {
        &self.inner.tracker.params
    }

    fn stats(&self) -> &OpStats {
        &self.stats
    }

    fn fork(&self) -> Self {
        Self {
            inner: self.inner.clone(),
            stats: OpStats::default(),
        }
    }

    fn export_public(&self) -> Vec<u8> {
        self.inner.keys.to_bytes(self.ctx())
    }

    fn import_public(params: &HeParams, bytes: &[u8]) -> Result<Self, HeError> {
        Ok(Self::from_keys(params, KeySet::from_bytes(params.ring(), bytes)?))
    }

    fn encrypt<R: RngCore + ?Sized>(&self, values: &[f64], level: usize, rng: &mut R) -> Result<Ciphertext, HeError> {
        let start = Instant::now();
        self.tracker().check_values(values)?;
        self.tracker().check_level(level)?;
        let pt = self.inner.encoder.encode(values, level)?;
        let mut ct = self.encrypt_plaintext(&pt, rng)?;
        ct.bounds = self.tracker().fresh(values, level);
        self.stats.record(OpKind::Encrypt, start.elapsed().as_nanos() as u64);
        Ok(ct)
    }

    fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<f64>, HeError> {
        let start = Instant::now();
        let pt = self.decrypt_plaintext(sk, ct)?;
        let out = self.inner.encoder.decode(&pt);
        self.stats.record(OpKind::Decrypt, start.elapsed().as_nanos() as u64);
        Ok(out)
    }

    fn level(&self, ct: &Ciphertext) -> usize {
        ct.level
    }

    fn scale(&self, ct: &Ciphertext) -> f64 {
        ct.scale
    }

    fn noise_estimate(&self, ct: &Ciphertext) -> f64 {
        ct.noise_estimate
    }

    fn bounds<'a>(&self, ct: &'a Ciphertext) -> &'a SlotBounds {
        &ct.bounds
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            self.tracker().check_pair(a.level, a.scale, b.level, b.scale)?;
            let ctx = self.ctx();
            let bounds = a.bounds.add(&b.bounds);
            Ok(Ciphertext {
                c0: ctx.add(&a.c0, &b.c0)?,
                c1: ctx.add(&a.c1, &b.c1)?,
                level: a.level,
                scale: a.scale,
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate, b.noise_estimate]),
                bounds,
            })
        })
    }

    fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            self.tracker().check_pair(a.level, a.scale, b.level, b.scale)?;
            let ctx = self.ctx();
            let bounds = a.bounds.add(&b.bounds);
            Ok(Ciphertext {
                c0: ctx.sub(&a.c0, &b.c0)?,
                c1: ctx.sub(&a.c1, &b.c1)?,
                level: a.level,
                scale: a.scale,
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate, b.noise_estimate]),
                bounds,
            })
        })
    }

    fn mul(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.stats.time(OpKind::Mul, || {
            self.tracker().check_pair(a.level, a.scale, b.level, b.scale)?;
            Self::check_mul_level(a.level)?;
            let ctx = self.ctx();
            let d0 = ctx.mul_eval(&a.c0, &b.c0)?;
            let mut d1 = ctx.mul_eval(&a.c0, &b.c1)?;
            ctx.mul_add_eval(&mut d1, &a.c1, &b.c0)?;
            let d2 = ctx.mul_eval(&a.c1, &b.c1)?;
            let (k0, k1) = self.inner.switcher.switch(&d2, &self.inner.keys.relin);
            let c0 = self.rescale(&ctx.add(&d0, &k0)?);
            let c1 = self.rescale(&ctx.add(&d1, &k1)?);
            let level = a.level - 1;
            let bounds = self.tracker().mul(&a.bounds, &b.bounds, a.level);
            Ok(Ciphertext {
                c0,
                c1,
                level,
                scale: self.params().scale_at(level),
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate, b.noise_estimate]),
                bounds,
            })
        })
    }

    fn mul_plain(&self, a: &Ciphertext, values: &[f64]) -> Result<Ciphertext, HeError> {
        self.stats.time(OpKind::MulPlain, || {
            self.tracker().check_values(values)?;
            Self::check_mul_level(a.level)?;
            let ctx = self.ctx();
            let pt = self.inner.encoder.encode(values, a.level)?;
            let c0 = self.rescale(&ctx.mul_eval(&a.c0, &pt.poly)?);
            let c1 = self.rescale(&ctx.mul_eval(&a.c1, &pt.poly)?);
            let level = a.level - 1;
            let bounds = self.tracker().mul_plain(&a.bounds, values, a.level);
            Ok(Ciphertext {
                c0,
                c1,
                level,
                scale: self.params().scale_at(level),
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate]),
                bounds,
            })
        })
    }

    fn mul_const(&self, a: &Ciphertext, c: f64) -> Result<Ciphertext, HeError> {
        self.stats.time(OpKind::MulPlain, || {
            Self::check_mul_level(a.level)?;
            let (ci, eff) = self.tracker().const_int(c, a.level);
            let (c0, c1) = self.scalar_mul_rescale(a, ci);
            let level = a.level - 1;
            let bounds = self.tracker().mul_const(&a.bounds, c, eff, a.level);
            Ok(Ciphertext {
                c0,
                c1,
                level,
                scale: self.params().scale_at(level),
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate]),
                bounds,
            })
        })
    }

    fn add_plain(&self, a: &Ciphertext, values: &[f64]) -> Result<Ciphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            self.tracker().check_values(values)?;
            let pt = self.inner.encoder.encode(values, a.level)?;
            let bounds = self.tracker().add_plain(&a.bounds, values, a.level);
            Ok(Ciphertext {
                c0: self.ctx().add(&a.c0, &pt.poly)?,
                c1: a.c1.clone(),
                level: a.level,
                scale: a.scale,
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate]),
                bounds,
            })
        })
    }

    fn add_const(&self, a: &Ciphertext, c: f64) -> Result<Ciphertext, HeError> {
        self.stats.time(OpKind::Add, || {
            let ctx = self.ctx();
            let (ci, eff) = self.tracker().const_int(c, a.level);
            let mut c0 = a.c0.clone();
            for (i, r) in RingContext::residues_mut(&mut c0).iter_mut().enumerate() {
                let q = ctx.modulus(i);
                let v = q.reduce_i128(ci);
                r.iter_mut().for_each(|x| *x = q.add(*x, v));
            }
            let bounds = self.tracker().add_const(&a.bounds, c, eff);
            Ok(Ciphertext {
                c0,
                c1: a.c1.clone(),
                level: a.level,
                scale: a.scale,
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate]),
                bounds,
            })
        })
    }

    fn rotate(&self, a: &Ciphertext, k: isize) -> Result<Ciphertext, HeError> {
        let mut out = a.clone();
        for step in rotation_steps(k, self.tracker().slots()) {
            out = self.stats.time(OpKind::Rotate, || self.rotate_step(&out, step))?;
        }
        Ok(out)
    }

    fn adjust_to(&self, a: &Ciphertext, level: usize, factor: f64) -> Result<Ciphertext, HeError> {
        if level == a.level && factor == 1.0 {
            return Ok(a.clone());
        }
        if level >= a.level {
            return Err(HeError::BadTarget { from: a.level, to: level });
        }
        self.stats.time(OpKind::MulPlain, || {
            let ctx = self.ctx();
            let (ci, eff) = self.tracker().adjust_int(a.level, level, factor);
            let dropped = Ciphertext {
                c0: ctx.drop_to(&a.c0, level + 1)?,
                c1: ctx.drop_to(&a.c1, level + 1)?,
                ..a.clone()
            };
            let (c0, c1) = self.scalar_mul_rescale(&dropped, ci);
            let bounds = self.tracker().adjust(&a.bounds, level, factor, eff);
            Ok(Ciphertext {
                c0,
                c1,
                level,
                scale: self.params().scale_at(level),
                noise_estimate: Tracker::estimate(&bounds, &[a.noise_estimate]),
                bounds,
            })
        })
    }

    fn to_bytes(&self, ct: &Ciphertext) -> Vec<u8> {
        let ctx = self.ctx();
        let mut w = Writer::with_capacity(64 + 2 * ct.c0.serialized_len());
        w.u8(CT_TAG)
            .u32(ct.level as u32)
            .f64(ct.scale)
            .f64(ct.noise_estimate)
            .f64(ct.bounds.max_noise())
            .f64(ct.bounds.max_magnitude());
        ct.c0.write(ctx, &mut w);
        ct.c1.write(ctx, &mut w);
        w.finish()
    }

    fn from_bytes(&self, bytes: &[u8]) -> Result<Ciphertext, HeError> {
        let ctx = self.ctx();
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
        let c0 = RingPoly::read(ctx, &mut r)?;
        let c1 = RingPoly::read(ctx, &mut r)?;
        r.finish()?;
        if c0.level() != level || c1.level() != level || c0.form() != Form::Evaluation || c1.form() != Form::Evaluation {
            return Err(WireError::invalid("ciphertext", "part level or form disagrees with header").into());
        }
        Ok(Ciphertext {
            c0,
            c1,
            level,
            scale,
            noise_estimate,
            bounds: SlotBounds::uniform(self.tracker().slots(), noise, magnitude),
        })
    }
}
