//! Word-sized modular arithmetic: Barrett and Shoup reduction, NTT-friendly
//! prime search and roots of unity.

/// A prime modulus below 2^62 with precomputed Barrett constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    // floor(2^128 / q) split into low and high words.
    ratio_lo: u64,
    ratio_hi: u64,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 1 && value < (1 << 62), "modulus out of range: {value}");
        // 2^128 / q computed as (2^128 - 1) / q; identical unless q divides 2^128,
        // which no odd modulus > 1 does.
        let ratio = u128::MAX / value as u128;
        Self {
            value,
            ratio_lo: ratio as u64,
            ratio_hi: (ratio >> 64) as u64,
        }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        64 - self.value.leading_zeros()
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        // Branch-free: when s < q the subtraction wraps above s.
        let s = a + b;
        s.min(s.wrapping_sub(self.value))
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = a.wrapping_sub(b);
        d.min(d.wrapping_add(self.value))
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    /// Reduces a 128-bit value given as two words.
    #[inline]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let lo = x as u64;
        let hi = (x >> 64) as u64;
        let m = u64::MAX as u128;
        // Estimate floor(x * ratio / 2^128) without overflowing u128.
        let a = (lo as u128 * self.ratio_lo as u128) >> 64;
        let b = lo as u128 * self.ratio_hi as u128;
        let c = hi as u128 * self.ratio_lo as u128;
        let mid = a + (b & m) + (c & m);
        let quot = ((b >> 64) + (c >> 64) + (mid >> 64)) as u64;
        let quot = quot.wrapping_add(hi.wrapping_mul(self.ratio_hi));
        // The quotient estimate is short by at most two.
        let r = lo.wrapping_sub(quot.wrapping_mul(self.value));
        let r = r.min(r.wrapping_sub(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    #[inline]
    pub fn reduce(&self, a: u64) -> u64 {
        if a < self.value {
            a
        } else {
            a % self.value
        }
    }

    /// Reduces a signed integer into `[0, q)`.
    #[inline]
    pub fn reduce_i64(&self, a: i64) -> u64 {
        let r = self.reduce_u128(a.unsigned_abs() as u128);
        let neg = self.value - r;
        let neg = neg.min(neg.wrapping_sub(self.value));
        let mask = (a >> 63) as u64;
        r ^ ((r ^ neg) & mask)
    }

    /// Reduces a signed 128-bit integer into `[0, q)`.
    #[inline]
    pub fn reduce_i128(&self, a: i128) -> u64 {
        a.rem_euclid(self.value as i128) as u64
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Precomputes `floor(w * 2^64 / q)` for repeated multiplication by `w`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod q` with `w_shoup = self.shoup(w)`; requires `a < q`.
    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    /// `a * w mod q` left in `[0, 2q)`; `a` may be any word.
    #[inline]
    pub fn mul_shoup_lazy(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value))
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse modulo a prime via Fermat.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = self.reduce(a);
        if a == 0 {
            None
        } else {
            Some(self.pow(a, self.value - 2))
        }
    }

    /// Maps a residue to its centered representative in `(-q/2, q/2]`.
    #[inline]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod_u64(acc, b, m);
        }
        b = mul_mod_u64(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Primes `q = 1 (mod 2n)` ordered by distance from `target`, skipping `exclude`.
///
/// Walks outward from `target` in steps of `2n`, alternating below/above.
pub fn ntt_primes_near(target: u64, n: usize, count: usize, exclude: &[u64]) -> Vec<u64> {
    let step = 2 * n as u64;
    let base = target - (target % step) + 1;
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        let below = base.checked_sub(k * step);
        let above = base + (k + 1) * step;
        let mut cands = Vec::with_capacity(2);
        if let Some(b) = below {
            cands.push(b);
        }
        cands.push(above);
        cands.sort_by_key(|c| c.abs_diff(target));
        for c in cands {
            if out.len() < count && c > 2 && c < (1 << 62) && is_prime(c) && !exclude.contains(&c) && !out.contains(&c) {
                out.push(c);
            }
        }
        k += 1;
        assert!(k < 1 << 40, "prime search exhausted");
    }
    out
}

/// The largest `count` primes `q = 1 (mod 2n)` strictly below `2^bits`.
pub fn ntt_primes_below(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Vec<u64> {
    let step = 2 * n as u64;
    let top = 1u64 << bits;
    let mut c = top - (top % step) + 1;
    if c >= top {
        c -= step;
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if is_prime(c) && !exclude.contains(&c) {
            out.push(c);
        }
        c = c.checked_sub(step).expect("prime search exhausted");
    }
    out
}

/// A primitive `2n`-th root of unity modulo `q`, the smallest such candidate power.
pub fn primitive_root_2n(q: &Modulus, n: usize) -> u64 {
    let order = 2 * n as u64;
    assert_eq!((q.value() - 1) % order, 0, "q != 1 mod 2n");
    let exp = (q.value() - 1) / order;
    for x in 2..q.value() {
        let psi = q.pow(x, exp);
        // Order is a power of two, so psi^(n) == -1 certifies order exactly 2n.
        if q.pow(psi, n as u64) == q.value() - 1 {
            return psi;
        }
    }
    unreachable!("no primitive root found")
}
