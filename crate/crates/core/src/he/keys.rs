//! Key material and hybrid key switching over the special primes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::{HeError, HeParams};
use crate::arith::Modulus;
use crate::ring::{sample_signed, Distribution, Form, RingContext, RingPoly};
use crate::wire::{Reader, WireError, Writer};

/// Ternary secret, kept in evaluation form modulo every chain and special prime.
#[derive(Clone)]
pub struct SecretKey {
    pub(crate) coeffs: Vec<i64>,
    /// Indexed by global modulus index (chain primes, then special primes).
    pub(crate) eval: Vec<Vec<u64>>,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    /// The secret at `level` in evaluation form.
    pub fn at_level(&self, ctx: &RingContext, level: usize) -> RingPoly {
        ctx.from_residues(self.eval[..=level].to_vec(), Form::Evaluation)
            .expect("secret residues are reduced")
    }
}

/// `(b, a)` with `b = -a*s + e`, at the top level in evaluation form.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicKey {
    pub b: RingPoly,
    pub a: RingPoly,
}

/// Key switching key from some `s'` to `s`: `b = -a*s + e + P*s'` modulo every
/// chain and special prime, evaluation form, indexed by global modulus index.
#[derive(Clone, PartialEq)]
pub struct SwitchKey {
    pub(crate) b: Vec<Vec<u64>>,
    pub(crate) a: Vec<Vec<u64>>,
}

impl fmt::Debug for SwitchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SwitchKey({} primes)", self.b.len())
    }
}

/// Everything a worker needs: public key, relinearization key, rotation keys
/// keyed by Galois element.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySet {
    pub pk: PublicKey,
    pub relin: SwitchKey,
    pub rot: BTreeMap<usize, SwitchKey>,
}

fn lift(ctx: &RingContext, coeffs: &[i64], idx: usize) -> Vec<u64> {
    let q = ctx.modulus(idx);
    let mut v: Vec<u64> = coeffs.iter().map(|&c| q.reduce_i64(c)).collect();
    ctx.table(idx).forward(&mut v);
    v
}

fn uniform<R: Rng + ?Sized>(ctx: &RingContext, idx: usize, rng: &mut R) -> Vec<u64> {
    let q = ctx.modulus(idx).value();
    (0..ctx.degree()).map(|_| rng.random_range(0..q)).collect()
}

/// Signed coefficients of `s(X^g)`.
fn automorphism_signed(coeffs: &[i64], g: usize) -> Vec<i64> {
    let n = coeffs.len();
    let mut out = vec![0i64; n];
    for (k, &c) in coeffs.iter().enumerate() {
        let e = k * g % (2 * n);
        if e < n {
            out[e] = c;
        } else {
            out[e - n] = -c;
        }
    }
    out
}

fn all_indices(ctx: &RingContext) -> std::ops::Range<usize> {
    0..ctx.special_indices().end
}

fn switch_key<R: Rng + ?Sized>(
    ctx: &RingContext,
    sk: &SecretKey,
    target: &[i64],
    sigma: f64,
    rng: &mut R,
) -> SwitchKey {
    let chain_len = ctx.max_level() + 1;
    let e = sample_signed(ctx.degree(), Distribution::Gaussian(sigma), rng);
    let mut b = Vec::new();
    let mut a = Vec::new();
    for idx in all_indices(ctx) {
        let q = ctx.modulus(idx);
        let ai = uniform(ctx, idx, rng);
        let mut bi = lift(ctx, &e, idx);
        for (x, (&av, &sv)) in bi.iter_mut().zip(ai.iter().zip(&sk.eval[idx])) {
            *x = q.sub(*x, q.mul(av, sv));
        }
        if idx < chain_len {
            let p_mod = ctx
                .special_primes()
                .iter()
                .fold(1u64, |acc, &p| q.mul(acc, q.reduce(p)));
            let t = lift(ctx, target, idx);
            for (x, tv) in bi.iter_mut().zip(t) {
                *x = q.add(*x, q.mul(p_mod, tv));
            }
        }
        b.push(bi);
        a.push(ai);
    }
    SwitchKey { b, a }
}

/// Generates a secret key and the public key set with rotation keys for the
/// given Galois elements.
pub(crate) fn keygen<R: Rng + ?Sized>(params: &HeParams, rotations: &[usize], rng: &mut R) -> (SecretKey, KeySet) {
    let ctx = params.ring();
    let n = ctx.degree();
    let coeffs = sample_signed(n, Distribution::Ternary, rng);
    let eval = all_indices(ctx).map(|idx| lift(ctx, &coeffs, idx)).collect();
    let sk = SecretKey { coeffs, eval };

    let top = ctx.max_level();
    let e = sample_signed(n, Distribution::Gaussian(params.sigma()), rng);
    let mut a_res = Vec::with_capacity(top + 1);
    let mut b_res = Vec::with_capacity(top + 1);
    for i in 0..=top {
        let q = ctx.modulus(i);
        let ai = uniform(ctx, i, rng);
        let mut bi = lift(ctx, &e, i);
        for (x, (&av, &sv)) in bi.iter_mut().zip(ai.iter().zip(&sk.eval[i])) {
            *x = q.sub(*x, q.mul(av, sv));
        }
        a_res.push(ai);
        b_res.push(bi);
    }
    let pk = PublicKey {
        b: ctx.from_residues(b_res, Form::Evaluation).unwrap(),
        a: ctx.from_residues(a_res, Form::Evaluation).unwrap(),
    };

    let s2 = negacyclic_square(&sk.coeffs);
    let relin = switch_key(ctx, &sk, &s2, params.sigma(), rng);
    let mut rot = BTreeMap::new();
    for &g in rotations {
        let target = automorphism_signed(&sk.coeffs, g);
        rot.insert(g, switch_key(ctx, &sk, &target, params.sigma(), rng));
    }
    (sk, KeySet { pk, relin, rot })
}

/// `s * s mod X^N + 1` over the integers (coefficients stay below N).
fn negacyclic_square(s: &[i64]) -> Vec<i64> {
    let n = s.len();
    let mut out = vec![0i64; n];
    let nz: Vec<(usize, i64)> = s.iter().copied().enumerate().filter(|&(_, c)| c != 0).collect();
    for &(i, a) in &nz {
        for &(j, b) in &nz {
            let k = i + j;
            if k < n {
                out[k] += a * b;
            } else {
                out[k - n] -= a * b;
            }
        }
    }
    out
}

/// Precomputed constants for fast base conversion between the chain and the
/// special primes.
#[derive(Debug)]
pub(crate) struct KeySwitcher {
    ctx: Arc<RingContext>,
    /// Per level: `(Q_l / q_i)^-1 mod q_i`.
    qhat_inv: Vec<Vec<u64>>,
    /// Per level: `[i][k] = Q_l / q_i mod p_k`.
    qhat_mod_p: Vec<Vec<Vec<u64>>>,
    /// `(P / p_k)^-1 mod p_k`.
    phat_inv: Vec<u64>,
    /// `[k][i] = P / p_k mod q_i`.
    phat_mod_q: Vec<Vec<u64>>,
    /// `[k][i] = p_k * (P / p_k) mod q_i`, subtracted for negative centered digits.
    p_mod_q: Vec<Vec<u64>>,
    /// `P^-1 mod q_i`.
    p_inv: Vec<u64>,
}

fn prod_mod(values: impl Iterator<Item = u64>, m: &Modulus) -> u64 {
    values.fold(1u64, |acc, v| m.mul(acc, m.reduce(v)))
}

impl KeySwitcher {
    pub(crate) fn new(ctx: &Arc<RingContext>) -> Self {
        let primes = ctx.chain().primes();
        let special = ctx.special_primes();
        let sp = ctx.special_indices();
        let mut qhat_inv = Vec::new();
        let mut qhat_mod_p = Vec::new();
        for l in 0..primes.len() {
            let active = &primes[..=l];
            let inv: Vec<u64> = (0..=l)
                .map(|i| {
                    let q = ctx.modulus(i);
                    let h = prod_mod(active.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v), q);
                    q.inv(h).expect("distinct primes")
                })
                .collect();
            let to_p: Vec<Vec<u64>> = (0..=l)
                .map(|i| {
                    sp.clone()
                        .map(|k| {
                            let p = ctx.modulus(k);
                            prod_mod(active.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v), p)
                        })
                        .collect()
                })
                .collect();
            qhat_inv.push(inv);
            qhat_mod_p.push(to_p);
        }
        let phat_inv = (0..special.len())
            .map(|k| {
                let p = ctx.modulus(sp.start + k);
                let h = prod_mod(special.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &v)| v), p);
                p.inv(h).expect("distinct primes")
            })
            .collect();
        let phat_mod_q: Vec<Vec<u64>> = (0..special.len())
            .map(|k| {
                (0..primes.len())
                    .map(|i| {
                        let q = ctx.modulus(i);
                        prod_mod(special.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &v)| v), q)
                    })
                    .collect()
            })
            .collect();
        let p_mod_q = (0..special.len())
            .map(|k| {
                (0..primes.len())
                    .map(|i| {
                        let q = ctx.modulus(i);
                        q.mul(q.reduce(special[k]), phat_mod_q[k][i])
                    })
                    .collect()
            })
            .collect();
        let p_inv = (0..primes.len())
            .map(|i| {
                let q = ctx.modulus(i);
                q.inv(prod_mod(special.iter().copied(), q)).expect("distinct primes")
            })
            .collect();
        Self {
            ctx: ctx.clone(),
            qhat_inv,
            qhat_mod_p,
            phat_inv,
            phat_mod_q,
            p_mod_q,
            p_inv,
        }
    }

    /// Returns `(k0, k1)` at the level of `d` (evaluation form) with
    /// `k0 + k1*s ~ d*s'` where `key` switches from `s'` to `s`.
    pub(crate) fn switch(&self, d: &RingPoly, key: &SwitchKey) -> (RingPoly, RingPoly) {
        let ctx = &*self.ctx;
        let n = ctx.degree();
        let l = d.level();
        let sp = ctx.special_indices();
        let kcount = sp.len();
        let d_eval = ctx.to_form(d, Form::Evaluation);
        let d_coeff = ctx.to_form(d, Form::Coefficient);

        // ModUp: extend d to the special primes.
        let ys: Vec<Vec<u64>> = (0..=l)
            .map(|i| {
                let q = ctx.modulus(i);
                let w = self.qhat_inv[l][i];
                let ws = q.shoup(w);
                d_coeff.residues[i].iter().map(|&x| q.mul_shoup(x, w, ws)).collect()
            })
            .collect();
        let ext: Vec<Vec<u64>> = (0..kcount)
            .map(|k| {
                let p = ctx.modulus(sp.start + k);
                let two_p = 2 * p.value();
                let mut v = vec![0u64; n];
                for (i, y) in ys.iter().enumerate() {
                    let c = self.qhat_mod_p[l][i][k];
                    let cs = p.shoup(c);
                    for (a, &x) in v.iter_mut().zip(y) {
                        let t = *a + p.mul_shoup_lazy(x, c, cs);
                        *a = t.min(t.wrapping_sub(two_p));
                    }
                }
                v.iter_mut().for_each(|a| *a = (*a).min(a.wrapping_sub(p.value())));
                ctx.table(sp.start + k).forward(&mut v);
                v
            })
            .collect();

        // Inner product with the key.
        let prod = |key_part: &Vec<Vec<u64>>| -> (Vec<Vec<u64>>, Vec<Vec<u64>>) {
            let chain = (0..=l)
                .map(|i| {
                    let q = ctx.modulus(i);
                    d_eval.residues[i].iter().zip(&key_part[i]).map(|(&x, &y)| q.mul(x, y)).collect()
                })
                .collect();
            let special = (0..kcount)
                .map(|k| {
                    let p = ctx.modulus(sp.start + k);
                    ext[k].iter().zip(&key_part[sp.start + k]).map(|(&x, &y)| p.mul(x, y)).collect()
                })
                .collect();
            (chain, special)
        };
        let (b_q, b_p) = prod(&key.b);
        let (a_q, a_p) = prod(&key.a);
        let k0 = self.mod_down(b_q, b_p, l);
        let k1 = self.mod_down(a_q, a_p, l);
        (k0, k1)
    }

    /// `(x_Q - Conv_{P->Q}(x_P)) * P^-1`, everything in evaluation form. The
    /// conversion uses centered digits so the rounding error has zero mean; a
    /// biased error would be amplified through its product with the secret.
    fn mod_down(&self, mut xq: Vec<Vec<u64>>, xp: Vec<Vec<u64>>, l: usize) -> RingPoly {
        let ctx = &*self.ctx;
        let n = ctx.degree();
        let sp = ctx.special_indices();
        let zs: Vec<Vec<u64>> = xp
            .into_iter()
            .enumerate()
            .map(|(k, mut v)| {
                ctx.table(sp.start + k).inverse(&mut v);
                let p = ctx.modulus(sp.start + k);
                let w = self.phat_inv[k];
                let ws = p.shoup(w);
                v.iter_mut().for_each(|x| *x = p.mul_shoup(*x, w, ws));
                v
            })
            .collect();
        let halves: Vec<u64> = (0..zs.len()).map(|k| ctx.modulus(sp.start + k).value() / 2).collect();
        for (i, xi) in xq.iter_mut().enumerate() {
            let q = ctx.modulus(i);
            // Each digit adds less than 3q, so the sum stays far below 2^64.
            let mut conv = vec![0u64; n];
            for (k, z) in zs.iter().enumerate() {
                let c = self.phat_mod_q[k][i];
                let cs = q.shoup(c);
                let neg = q.neg(self.p_mod_q[k][i]);
                let half = halves[k];
                for (a, &v) in conv.iter_mut().zip(z) {
                    *a += q.mul_shoup_lazy(v, c, cs) + (neg & ((half < v) as u64).wrapping_neg());
                }
            }
            conv.iter_mut().for_each(|a| *a = q.reduce_u128(*a as u128));
            ctx.table(i).forward(&mut conv);
            let w = self.p_inv[i];
            let ws = q.shoup(w);
            for (x, c) in xi.iter_mut().zip(conv) {
                *x = q.mul_shoup(q.sub(*x, c), w, ws);
            }
        }
        debug_assert_eq!(xq.len(), l + 1);
        ctx.from_residues(xq, Form::Evaluation).expect("reduced residues")
    }
}

impl SwitchKey {
    fn write(&self, w: &mut Writer) {
        w.u32(self.b.len() as u32);
        for v in self.b.iter().chain(&self.a) {
            w.u64_slice(v);
        }
    }

    fn read(ctx: &RingContext, r: &mut Reader<'_>) -> Result<Self, WireError> {
        let count = r.u32()? as usize;
        if count != ctx.special_indices().end {
            return Err(WireError::invalid("switch key", format!("{count} primes")));
        }
        let mut parts = Vec::with_capacity(2 * count);
        for j in 0..2 * count {
            let v = r.u64_vec(ctx.degree())?;
            let q = ctx.modulus(j % count).value();
            if v.iter().any(|&x| x >= q) {
                return Err(WireError::invalid("switch key", "residue out of range"));
            }
            parts.push(v);
        }
        let a = parts.split_off(count);
        Ok(Self { b: parts, a })
    }
}

impl KeySet {
    pub fn to_bytes(&self, ctx: &RingContext) -> Vec<u8> {
        let mut w = Writer::new();
        self.pk.b.write(ctx, &mut w);
        self.pk.a.write(ctx, &mut w);
        self.relin.write(&mut w);
        w.u32(self.rot.len() as u32);
        for (&g, k) in &self.rot {
            w.u64(g as u64);
            k.write(&mut w);
        }
        w.finish()
    }

    pub fn from_bytes(ctx: &RingContext, bytes: &[u8]) -> Result<Self, HeError> {
        let mut r = Reader::new(bytes);
        let b = RingPoly::read(ctx, &mut r)?;
        let a = RingPoly::read(ctx, &mut r)?;
        let relin = SwitchKey::read(ctx, &mut r)?;
        let count = r.u32()?;
        let mut rot = BTreeMap::new();
        for _ in 0..count {
            let g = r.u64()? as usize;
            rot.insert(g, SwitchKey::read(ctx, &mut r)?);
        }
        r.finish()?;
        Ok(Self {
            pk: PublicKey { b, a },
            relin,
            rot,
        })
    }
}
