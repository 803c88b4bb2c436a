//! Arithmetic in `Z_Q[X]/(X^N + 1)` with `Q` held as a chain of word-sized
//! NTT-friendly primes (residue number system).
//!
//! A [`RingPoly`] at level `l` carries residues modulo the first `l + 1`
//! primes of the chain; dropping a level discards the last residue. All
//! operations live on [`RingContext`], which owns the chain, the key-switching
//! primes and the shared NTT tables.

mod ntt;
mod sample;
mod serial;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::arith::{is_prime, Modulus};

pub use ntt::{automorphism_permutation, NttTable};
pub use sample::{sample, sample_signed, Distribution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RingError {
    #[error("level mismatch: {0} vs {1}")]
    LevelMismatch(usize, usize),
    #[error("form mismatch: {0:?} vs {1:?}")]
    FormMismatch(Form, Form),
    #[error("expected {expected:?} form, got {got:?}")]
    WrongForm { expected: Form, got: Form },
    #[error("level {level} exceeds chain maximum {max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("cannot drop below level 0")]
    NoLevelToDrop,
    #[error("invalid modulus chain: {0}")]
    InvalidChain(String),
    #[error("coefficient vector has length {got}, ring degree is {n}")]
    DegreeMismatch { got: usize, n: usize },
}

/// Representation of a polynomial: coefficients, or values at the odd powers
/// of a primitive `2N`-th root (bit-reversed order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    Coefficient,
    Evaluation,
}

/// Ordered list of distinct primes `q_0, ..., q_L`, each `1 mod 2N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModulusChain {
    primes: Vec<u64>,
}

impl ModulusChain {
    pub fn new(primes: Vec<u64>, n: usize) -> Result<Self, RingError> {
        if primes.len() < 2 {
            return Err(RingError::InvalidChain(format!("need at least 2 primes, got {}", primes.len())));
        }
        validate_primes(&primes, n)?;
        Ok(Self { primes })
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn max_level(&self) -> usize {
        self.primes.len() - 1
    }

    /// Bit length of the full product `q_0 * ... * q_L`.
    pub fn total_bits(&self) -> f64 {
        self.primes.iter().map(|&p| (p as f64).log2()).sum()
    }
}

fn validate_primes(primes: &[u64], n: usize) -> Result<(), RingError> {
    if !n.is_power_of_two() || n < 2 {
        return Err(RingError::InvalidChain(format!("ring degree {n} is not a power of two")));
    }
    for (i, &p) in primes.iter().enumerate() {
        if !is_prime(p) {
            return Err(RingError::InvalidChain(format!("{p} is not prime")));
        }
        if p % (2 * n as u64) != 1 {
            return Err(RingError::InvalidChain(format!("{p} is not 1 mod {}", 2 * n)));
        }
        if p >= 1 << 62 {
            return Err(RingError::InvalidChain(format!("{p} exceeds 62 bits")));
        }
        if primes[..i].contains(&p) {
            return Err(RingError::InvalidChain(format!("{p} repeated")));
        }
    }
    Ok(())
}

fn shared_table(q: u64, n: usize) -> Arc<NttTable> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), Arc<NttTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap().get(&(q, n)) {
        return t.clone();
    }
    let t = Arc::new(NttTable::new(Modulus::new(q), n));
    cache.lock().unwrap().entry((q, n)).or_insert(t).clone()
}

/// Ring parameters plus precomputed tables. Shared read-only via `Arc`.
#[derive(Debug)]
pub struct RingContext {
    n: usize,
    chain: ModulusChain,
    special: Vec<u64>,
    moduli: Vec<Modulus>,
    tables: Vec<Arc<NttTable>>,
    galois: Mutex<HashMap<usize, Arc<Vec<usize>>>>,
}

/// Element of `R_Q` at some level of the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingPoly {
    pub(crate) level: usize,
    pub(crate) form: Form,
    /// `residues[i][k]` is coefficient (or evaluation) `k` modulo prime `i`.
    pub(crate) residues: Vec<Vec<u64>>,
}

impl RingPoly {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn degree(&self) -> usize {
        self.residues[0].len()
    }

    pub fn residues(&self, prime_index: usize) -> &[u64] {
        &self.residues[prime_index]
    }

    /// Coefficient-major view: `coeff(k)[i]` is coefficient `k` mod prime `i`.
    pub fn coeff(&self, k: usize) -> Vec<u64> {
        self.residues.iter().map(|r| r[k]).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.residues.iter().all(|r| r.iter().all(|&x| x == 0))
    }
}

impl RingContext {
    /// Builds a context for chain primes plus optional key-switching primes.
    pub fn new(n: usize, chain: ModulusChain, special: Vec<u64>) -> Result<Arc<Self>, RingError> {
        let mut all = chain.primes().to_vec();
        all.extend_from_slice(&special);
        validate_primes(&all, n)?;
        let moduli = all.iter().map(|&q| Modulus::new(q)).collect();
        let tables = all.iter().map(|&q| shared_table(q, n)).collect();
        Ok(Arc::new(Self {
            n,
            chain,
            special,
            moduli,
            tables,
            galois: Mutex::new(HashMap::new()),
        }))
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn chain(&self) -> &ModulusChain {
        &self.chain
    }

    pub fn max_level(&self) -> usize {
        self.chain.max_level()
    }

    pub fn special_primes(&self) -> &[u64] {
        &self.special
    }

    /// Modulus by global index: chain primes first, then key-switching primes.
    pub fn modulus(&self, index: usize) -> &Modulus {
        &self.moduli[index]
    }

    pub fn table(&self, index: usize) -> &NttTable {
        &self.tables[index]
    }

    /// Global indices of the key-switching primes.
    pub fn special_indices(&self) -> std::ops::Range<usize> {
        let c = self.chain.primes().len();
        c..c + self.special.len()
    }

    fn check_level(&self, level: usize) -> Result<(), RingError> {
        if level > self.max_level() {
            Err(RingError::LevelOutOfRange {
                level,
                max: self.max_level(),
            })
        } else {
            Ok(())
        }
    }

    pub fn zero(&self, level: usize, form: Form) -> Result<RingPoly, RingError> {
        self.check_level(level)?;
        Ok(RingPoly {
            level,
            form,
            residues: vec![vec![0; self.n]; level + 1],
        })
    }

    /// The constant polynomial `c` in coefficient form.
    pub fn constant(&self, c: i64, level: usize) -> Result<RingPoly, RingError> {
        let mut p = self.zero(level, Form::Coefficient)?;
        for (i, r) in p.residues.iter_mut().enumerate() {
            r[0] = self.moduli[i].reduce_i64(c);
        }
        Ok(p)
    }

    /// The monomial `X^k` (coefficient form), `k < 2N` with `X^N = -1`.
    pub fn monomial(&self, k: usize, level: usize) -> Result<RingPoly, RingError> {
        let mut p = self.zero(level, Form::Coefficient)?;
        let (idx, neg) = (k % self.n, (k / self.n) % 2 == 1);
        for (i, r) in p.residues.iter_mut().enumerate() {
            r[idx] = if neg { self.moduli[i].value() - 1 } else { 1 };
        }
        Ok(p)
    }

    /// Lifts signed coefficients into coefficient form at `level`.
    pub fn from_signed(&self, coeffs: &[i64], level: usize) -> Result<RingPoly, RingError> {
        self.check_level(level)?;
        if coeffs.len() != self.n {
            return Err(RingError::DegreeMismatch {
                got: coeffs.len(),
                n: self.n,
            });
        }
        let residues = (0..=level)
            .map(|i| {
                let q = &self.moduli[i];
                coeffs.iter().map(|&c| q.reduce_i64(c)).collect()
            })
            .collect();
        Ok(RingPoly {
            level,
            form: Form::Coefficient,
            residues,
        })
    }

    /// As [`Self::from_signed`] for 128-bit coefficients.
    pub fn from_i128(&self, coeffs: &[i128], level: usize) -> Result<RingPoly, RingError> {
        self.check_level(level)?;
        if coeffs.len() != self.n {
            return Err(RingError::DegreeMismatch {
                got: coeffs.len(),
                n: self.n,
            });
        }
        let residues = (0..=level)
            .map(|i| {
                let q = &self.moduli[i];
                coeffs.iter().map(|&c| q.reduce_i128(c)).collect()
            })
            .collect();
        Ok(RingPoly {
            level,
            form: Form::Coefficient,
            residues,
        })
    }

    /// Raw residues (one vector per prime, each of length N) in the given form.
    pub fn from_residues(&self, residues: Vec<Vec<u64>>, form: Form) -> Result<RingPoly, RingError> {
        if residues.is_empty() {
            return Err(RingError::InvalidChain("no residues".into()));
        }
        let level = residues.len() - 1;
        self.check_level(level)?;
        for (i, r) in residues.iter().enumerate() {
            if r.len() != self.n {
                return Err(RingError::DegreeMismatch { got: r.len(), n: self.n });
            }
            let q = self.moduli[i].value();
            if r.iter().any(|&x| x >= q) {
                return Err(RingError::InvalidChain(format!("residue out of range for prime {q}")));
            }
        }
        Ok(RingPoly { level, form, residues })
    }

    fn check_pair(a: &RingPoly, b: &RingPoly) -> Result<(), RingError> {
        if a.level != b.level {
            return Err(RingError::LevelMismatch(a.level, b.level));
        }
        if a.form != b.form {
            return Err(RingError::FormMismatch(a.form, b.form));
        }
        Ok(())
    }

    pub fn add(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly, RingError> {
        Self::check_pair(a, b)?;
        let mut out = a.clone();
        self.add_assign(&mut out, b)?;
        Ok(out)
    }

    pub fn add_assign(&self, a: &mut RingPoly, b: &RingPoly) -> Result<(), RingError> {
        Self::check_pair(a, b)?;
        for (i, (x, y)) in a.residues.iter_mut().zip(&b.residues).enumerate() {
            let q = &self.moduli[i];
            for (u, v) in x.iter_mut().zip(y) {
                *u = q.add(*u, *v);
            }
        }
        Ok(())
    }

    pub fn sub(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly, RingError> {
        Self::check_pair(a, b)?;
        let mut out = a.clone();
        for (i, (x, y)) in out.residues.iter_mut().zip(&b.residues).enumerate() {
            let q = &self.moduli[i];
            for (u, v) in x.iter_mut().zip(y) {
                *u = q.sub(*u, *v);
            }
        }
        Ok(out)
    }

    pub fn neg(&self, a: &RingPoly) -> RingPoly {
        let mut out = a.clone();
        for (i, x) in out.residues.iter_mut().enumerate() {
            let q = &self.moduli[i];
            for u in x.iter_mut() {
                *u = q.neg(*u);
            }
        }
        out
    }

    /// Multiplies by a per-prime scalar (`scalars[i]` already reduced mod prime `i`).
    pub fn mul_scalar_rns(&self, a: &RingPoly, scalars: &[u64]) -> RingPoly {
        let mut out = a.clone();
        for (i, x) in out.residues.iter_mut().enumerate() {
            let q = &self.moduli[i];
            let s = scalars[i];
            let ss = q.shoup(s);
            for u in x.iter_mut() {
                *u = q.mul_shoup(*u, s, ss);
            }
        }
        out
    }

    /// Multiplies by a signed integer scalar.
    pub fn mul_scalar(&self, a: &RingPoly, c: i128) -> RingPoly {
        let scalars: Vec<u64> = (0..=a.level).map(|i| self.moduli[i].reduce_i128(c)).collect();
        self.mul_scalar_rns(a, &scalars)
    }

    /// Pointwise product of two evaluation-form polynomials.
    pub fn mul_eval(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly, RingError> {
        Self::check_pair(a, b)?;
        if a.form != Form::Evaluation {
            return Err(RingError::WrongForm {
                expected: Form::Evaluation,
                got: a.form,
            });
        }
        let mut out = a.clone();
        for (i, (x, y)) in out.residues.iter_mut().zip(&b.residues).enumerate() {
            let q = &self.moduli[i];
            for (u, v) in x.iter_mut().zip(y) {
                *u = q.mul(*u, *v);
            }
        }
        Ok(out)
    }

    /// Accumulates `acc += a * b` pointwise (evaluation form).
    pub fn mul_add_eval(&self, acc: &mut RingPoly, a: &RingPoly, b: &RingPoly) -> Result<(), RingError> {
        Self::check_pair(a, b)?;
        Self::check_pair(acc, a)?;
        for i in 0..=acc.level {
            let q = &self.moduli[i];
            for ((u, x), y) in acc.residues[i].iter_mut().zip(&a.residues[i]).zip(&b.residues[i]) {
                *u = q.add(*u, q.mul(*x, *y));
            }
        }
        Ok(())
    }

    /// Negacyclic product. Inputs must share level and form; the result is in
    /// that same form.
    pub fn mul(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly, RingError> {
        Self::check_pair(a, b)?;
        match a.form {
            Form::Evaluation => self.mul_eval(a, b),
            Form::Coefficient => {
                let fa = self.ntt_forward(a)?;
                let fb = self.ntt_forward(b)?;
                self.ntt_inverse(&self.mul_eval(&fa, &fb)?)
            }
        }
    }

    pub fn ntt_forward(&self, a: &RingPoly) -> Result<RingPoly, RingError> {
        if a.form != Form::Coefficient {
            return Err(RingError::WrongForm {
                expected: Form::Coefficient,
                got: a.form,
            });
        }
        let mut out = a.clone();
        for (i, r) in out.residues.iter_mut().enumerate() {
            self.tables[i].forward(r);
        }
        out.form = Form::Evaluation;
        Ok(out)
    }

    pub fn ntt_inverse(&self, a: &RingPoly) -> Result<RingPoly, RingError> {
        if a.form != Form::Evaluation {
            return Err(RingError::WrongForm {
                expected: Form::Evaluation,
                got: a.form,
            });
        }
        let mut out = a.clone();
        for (i, r) in out.residues.iter_mut().enumerate() {
            self.tables[i].inverse(r);
        }
        out.form = Form::Coefficient;
        Ok(out)
    }

    /// Converts to the requested form (no-op if already there).
    pub fn to_form(&self, a: &RingPoly, form: Form) -> RingPoly {
        match (a.form, form) {
            (Form::Coefficient, Form::Evaluation) => self.ntt_forward(a).unwrap(),
            (Form::Evaluation, Form::Coefficient) => self.ntt_inverse(a).unwrap(),
            _ => a.clone(),
        }
    }

    /// Discards the last residue, moving from level `l` to `l - 1`.
    pub fn drop_last(&self, a: &RingPoly) -> Result<RingPoly, RingError> {
        if a.level == 0 {
            return Err(RingError::NoLevelToDrop);
        }
        let mut out = a.clone();
        out.residues.pop();
        out.level -= 1;
        Ok(out)
    }

    /// Discards residues down to `level`.
    pub fn drop_to(&self, a: &RingPoly, level: usize) -> Result<RingPoly, RingError> {
        if level > a.level {
            return Err(RingError::LevelMismatch(a.level, level));
        }
        let mut out = a.clone();
        out.residues.truncate(level + 1);
        out.level = level;
        Ok(out)
    }

    pub(crate) fn galois_permutation(&self, g: usize) -> Arc<Vec<usize>> {
        let mut cache = self.galois.lock().unwrap();
        cache
            .entry(g)
            .or_insert_with(|| Arc::new(automorphism_permutation(self.n, g)))
            .clone()
    }

    /// Applies `X -> X^g` (g odd) in either form.
    pub fn automorphism(&self, a: &RingPoly, g: usize) -> RingPoly {
        assert!(g % 2 == 1, "galois element must be odd");
        let n = self.n;
        match a.form {
            Form::Evaluation => {
                let perm = self.galois_permutation(g % (2 * n));
                let residues = a
                    .residues
                    .iter()
                    .map(|r| perm.iter().map(|&j| r[j]).collect())
                    .collect();
                RingPoly {
                    level: a.level,
                    form: a.form,
                    residues,
                }
            }
            Form::Coefficient => {
                let mut out = vec![vec![0u64; n]; a.level + 1];
                for (i, r) in a.residues.iter().enumerate() {
                    let q = &self.moduli[i];
                    for (k, &c) in r.iter().enumerate() {
                        let e = (k * g) % (2 * n);
                        if e < n {
                            out[i][e] = c;
                        } else {
                            out[i][e - n] = q.neg(c);
                        }
                    }
                }
                RingPoly {
                    level: a.level,
                    form: a.form,
                    residues: out,
                }
            }
        }
    }

    /// Centered lift of the prime-0 residue. Exact whenever every true
    /// coefficient lies in `(-q_0/2, q_0/2]`.
    pub fn centered_base(&self, a: &RingPoly) -> Vec<i64> {
        let a = self.to_form(a, Form::Coefficient);
        let q = &self.moduli[0];
        a.residues[0].iter().map(|&x| q.center(x)).collect()
    }

    /// Centered infinity norm, computed from the prime-0 residue.
    pub fn inf_norm_base(&self, a: &RingPoly) -> u64 {
        self.centered_base(a).iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    pub(crate) fn residues_mut(a: &mut RingPoly) -> &mut Vec<Vec<u64>> {
        &mut a.residues
    }
}

#[cfg(test)]
mod tests;
