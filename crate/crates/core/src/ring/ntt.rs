//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)`.
//!
//! Forward is merged Cooley-Tukey with the `psi` twist folded into the
//! twiddles, producing output in bit-reversed order: slot `i` holds
//! `a(psi^(2*brv(i)+1))`. Inverse is the matching Gentleman-Sande pass.
//! Butterflies keep values lazily reduced (below `4q` forward, `2q`
//! inverse) and reduce once at the end, which needs `q < 2^62`.

use crate::arith::{primitive_root_2n, Modulus};

#[derive(Debug, Clone)]
pub struct NttTable {
    n: usize,
    q: Modulus,
    psi: u64,
    // psi^brv(i) and its Shoup companion
    fwd: Vec<u64>,
    fwd_shoup: Vec<u64>,
    inv: Vec<u64>,
    inv_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

pub(crate) fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

impl NttTable {
    pub fn new(q: Modulus, n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2);
        let psi = primitive_root_2n(&q, n);
        let psi_inv = q.inv(psi).expect("psi invertible");
        let bits = n.trailing_zeros();
        let mut fwd = vec![0u64; n];
        let mut inv = vec![0u64; n];
        let mut p = 1u64;
        let mut pi = 1u64;
        for i in 0..n {
            let r = bit_reverse(i, bits);
            fwd[r] = p;
            inv[r] = pi;
            p = q.mul(p, psi);
            pi = q.mul(pi, psi_inv);
        }
        let fwd_shoup = fwd.iter().map(|&w| q.shoup(w)).collect();
        let inv_shoup = inv.iter().map(|&w| q.shoup(w)).collect();
        let n_inv = q.inv(n as u64).expect("n invertible");
        Self {
            n,
            q,
            psi,
            fwd,
            fwd_shoup,
            inv,
            inv_shoup,
            n_inv,
            n_inv_shoup: q.shoup(n_inv),
        }
    }

    pub fn modulus(&self) -> &Modulus {
        &self.q
    }

    pub fn psi(&self) -> u64 {
        self.psi
    }

    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = &self.q;
        let two_q = 2 * q.value();
        let n = self.n;
        let mut t = n;
        let mut m = 1;
        while m < n {
            t >>= 1;
            let tw = self.fwd[m..2 * m].iter().zip(&self.fwd_shoup[m..2 * m]);
            for (block, (&w, &ws)) in a.chunks_exact_mut(2 * t).zip(tw) {
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let u = u.min(u.wrapping_sub(two_q));
                    let v = q.mul_shoup_lazy(*y, w, ws);
                    *x = u + v;
                    *y = u + two_q - v;
                }
            }
            m <<= 1;
        }
        for x in a.iter_mut() {
            let r = (*x).min(x.wrapping_sub(two_q));
            *x = r.min(r.wrapping_sub(q.value()));
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = &self.q;
        let two_q = 2 * q.value();
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let tw = self.inv[h..m].iter().zip(&self.inv_shoup[h..m]);
            for (block, (&w, &ws)) in a.chunks_exact_mut(2 * t).zip(tw) {
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    let s = u + v;
                    *x = s.min(s.wrapping_sub(two_q));
                    *y = q.mul_shoup_lazy(u + two_q - v, w, ws);
                }
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = q.mul_shoup(*x, self.n_inv, self.n_inv_shoup);
        }
    }
}

/// Index permutation realizing the Galois automorphism `X -> X^g` on
/// evaluation-form vectors: `out[i] = in[perm[i]]`.
pub fn automorphism_permutation(n: usize, g: usize) -> Vec<usize> {
    let bits = n.trailing_zeros();
    let two_n = 2 * n;
    // exponent at position i is e_i = 2*brv(i)+1; sigma_g(a)(psi^e) = a(psi^(e*g))
    let mut pos_of_exp = vec![0usize; two_n];
    for i in 0..n {
        pos_of_exp[2 * bit_reverse(i, bits) + 1] = i;
    }
    (0..n)
        .map(|i| {
            let e = 2 * bit_reverse(i, bits) + 1;
            pos_of_exp[(e * g) % two_n]
        })
        .collect()
}
