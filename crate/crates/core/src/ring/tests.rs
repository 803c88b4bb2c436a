use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::arith::ntt_primes_below;

fn ctx(n: usize, primes: Vec<u64>) -> Arc<RingContext> {
    RingContext::new(n, ModulusChain::new(primes, n).unwrap(), vec![]).unwrap()
}

fn ctx_n(n: usize) -> Arc<RingContext> {
    ctx(n, ntt_primes_below(50, n, 3, &[]))
}

/// O(N^2) negacyclic convolution with plain `%` arithmetic, one prime at a time.
fn schoolbook(a: &RingPoly, b: &RingPoly, primes: &[u64]) -> Vec<Vec<u64>> {
    let n = a.degree();
    (0..=a.level)
        .map(|i| {
            let q = primes[i] as i128;
            let mut out = vec![0i128; n];
            for x in 0..n {
                for y in 0..n {
                    let p = a.residues[i][x] as i128 * b.residues[i][y] as i128 % q;
                    if x + y < n {
                        out[x + y] += p;
                    } else {
                        out[x + y - n] -= p;
                    }
                }
            }
            out.into_iter().map(|v| v.rem_euclid(q) as u64).collect()
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn additive_identity_and_inverse() {
    let c = ctx_n(16);
    let a = sample(&c, Distribution::Uniform, 2, &mut rng(1)).unwrap();
    let zero = c.zero(2, Form::Coefficient).unwrap();
    assert_eq!(c.add(&a, &zero).unwrap(), a);
    assert!(c.add(&a, &c.neg(&a)).unwrap().is_zero());
}

#[test]
fn add_matches_schoolbook_mod_97() {
    let c = ctx(16, vec![97, 193]);
    let mut r = rng(2);
    for _ in 0..20 {
        let a = sample(&c, Distribution::Uniform, 1, &mut r).unwrap();
        let b = sample(&c, Distribution::Uniform, 1, &mut r).unwrap();
        let s = c.add(&a, &b).unwrap();
        for k in 0..16 {
            assert_eq!(s.residues[0][k], (a.residues[0][k] + b.residues[0][k]) % 97);
        }
    }
}

#[test]
fn multiplicative_identity_and_wraparound() {
    let c = ctx_n(16);
    let a = sample(&c, Distribution::Uniform, 2, &mut rng(3)).unwrap();
    let one = c.constant(1, 2).unwrap();
    assert_eq!(c.mul(&a, &one).unwrap(), a);

    let half = c.monomial(8, 2).unwrap();
    let prod = c.mul(&half, &half).unwrap();
    assert_eq!(prod, c.constant(-1, 2).unwrap());
    for i in 0..=2 {
        assert_eq!(prod.residues[i][0], c.modulus(i).value() - 1);
    }
}

#[test]
fn ntt_mul_matches_schoolbook_small_prime() {
    let c = ctx(16, vec![97, 193]);
    let mut r = rng(4);
    for _ in 0..50 {
        let a = sample(&c, Distribution::Uniform, 1, &mut r).unwrap();
        let b = sample(&c, Distribution::Uniform, 1, &mut r).unwrap();
        assert_eq!(c.mul(&a, &b).unwrap().residues, schoolbook(&a, &b, &[97, 193]));
    }
}

#[test]
fn ntt_round_trip_and_zero() {
    let c = ctx_n(32);
    let a = sample(&c, Distribution::Uniform, 2, &mut rng(5)).unwrap();
    let f = c.ntt_forward(&a).unwrap();
    assert_eq!(f.form(), Form::Evaluation);
    assert_eq!(c.ntt_inverse(&f).unwrap(), a);
    let z = c.zero(2, Form::Coefficient).unwrap();
    assert!(c.ntt_forward(&z).unwrap().is_zero());
}

#[test]
fn pointwise_product_matches_ring_mul() {
    let c = ctx_n(16);
    let mut r = rng(6);
    let a = sample(&c, Distribution::Uniform, 2, &mut r).unwrap();
    let b = sample(&c, Distribution::Uniform, 2, &mut r).unwrap();
    let fa = c.ntt_forward(&a).unwrap();
    let fb = c.ntt_forward(&b).unwrap();
    let via_eval = c.ntt_inverse(&c.mul_eval(&fa, &fb).unwrap()).unwrap();
    assert_eq!(via_eval.residues, schoolbook(&a, &b, c.chain().primes()));
}

#[test]
fn structural_errors() {
    let c = ctx_n(16);
    let a = c.zero(2, Form::Coefficient).unwrap();
    let b = c.zero(1, Form::Coefficient).unwrap();
    let e = c.zero(2, Form::Evaluation).unwrap();
    assert_eq!(c.add(&a, &b), Err(RingError::LevelMismatch(2, 1)));
    assert!(matches!(c.add(&a, &e), Err(RingError::FormMismatch(..))));
    assert!(matches!(c.mul(&a, &b), Err(RingError::LevelMismatch(..))));
    assert!(matches!(c.ntt_forward(&e), Err(RingError::WrongForm { .. })));
    assert!(matches!(c.ntt_inverse(&a), Err(RingError::WrongForm { .. })));
    assert!(matches!(c.zero(9, Form::Coefficient), Err(RingError::LevelOutOfRange { .. })));
}

#[test]
fn chain_validation() {
    assert!(ModulusChain::new(vec![97], 16).is_err());
    assert!(ModulusChain::new(vec![97, 97], 16).is_err());
    assert!(ModulusChain::new(vec![97, 101], 16).is_err()); // 101 != 1 mod 32
    assert!(ModulusChain::new(vec![97, 193], 16).is_ok());
    assert!(ModulusChain::new(vec![97, 193], 12).is_err());
}

#[test]
fn ternary_support() {
    let c = ctx_n(32);
    let s = sample_signed(1024, Distribution::Ternary, &mut rng(7));
    assert!(s.iter().all(|&x| (-1..=1).contains(&x)));
    assert!(s.contains(&-1) && s.contains(&0) && s.contains(&1));
    let p = sample(&c, Distribution::Ternary, 1, &mut rng(7)).unwrap();
    assert!(c.centered_base(&p).iter().all(|&x| x.abs() <= 1));
}

#[test]
fn gaussian_moments() {
    let xs = sample_signed(100_000, Distribution::Gaussian(3.2), &mut rng(8));
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<i64>() as f64 / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.05, "mean {mean}");
    // rounding adds 1/12 to the variance of the continuous gaussian
    let sd = var.sqrt();
    assert!((sd - 3.2).abs() / 3.2 < 0.05, "sd {sd}");
    assert!(xs.iter().all(|&x| (x as f64).abs() <= 6.0 * 3.2 + 0.5));
}

#[test]
fn sampling_is_deterministic() {
    let c = ctx_n(16);
    for kind in [Distribution::Uniform, Distribution::Ternary, Distribution::Gaussian(3.2)] {
        let a = sample(&c, kind, 2, &mut rng(9)).unwrap();
        let b = sample(&c, kind, 2, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        let d = sample(&c, kind, 2, &mut rng(10)).unwrap();
        assert_ne!(a, d);
    }
}

#[test]
fn automorphism_forms_agree() {
    let c = ctx_n(32);
    let a = sample(&c, Distribution::Uniform, 2, &mut rng(11)).unwrap();
    for g in [5usize, 25, 63, 2 * 32 - 5] {
        let coeff = c.automorphism(&a, g);
        let eval = c.automorphism(&c.ntt_forward(&a).unwrap(), g);
        assert_eq!(c.ntt_inverse(&eval).unwrap(), coeff);
    }
    // X -> X^g is a ring homomorphism
    let b = sample(&c, Distribution::Uniform, 2, &mut rng(12)).unwrap();
    let lhs = c.automorphism(&c.mul(&a, &b).unwrap(), 5);
    let rhs = c.mul(&c.automorphism(&a, 5), &c.automorphism(&b, 5)).unwrap();
    assert_eq!(lhs, rhs);
}

#[test]
fn serialization_is_bit_exact() {
    let c = ctx(16, vec![97, 193]);
    let mut a = c.zero(1, Form::Coefficient).unwrap();
    a.residues[0][0] = 5;
    a.residues[1][0] = 7;
    a.residues[0][1] = 1;
    let bytes = a.to_bytes(&c);
    assert_eq!(bytes.len(), a.serialized_len());
    // header
    assert_eq!(&bytes[0..4], &16u32.to_le_bytes());
    assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    assert_eq!(bytes[8], 0);
    assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
    assert_eq!(&bytes[13..21], &97u64.to_le_bytes());
    assert_eq!(&bytes[21..29], &193u64.to_le_bytes());
    // coefficient 0 for both primes, then coefficient 1
    assert_eq!(&bytes[29..37], &5u64.to_le_bytes());
    assert_eq!(&bytes[37..45], &7u64.to_le_bytes());
    assert_eq!(&bytes[45..53], &1u64.to_le_bytes());
    assert_eq!(RingPoly::from_bytes(&c, &bytes).unwrap(), a);
    assert!(RingPoly::from_bytes(&c, &bytes[..bytes.len() - 1]).is_err());
}

fn arb_pair(n: usize) -> impl Strategy<Value = (Vec<u64>, Vec<u64>, Vec<u64>)> {
    let v = proptest::collection::vec(any::<u64>(), n * 3);
    (v.clone(), v.clone(), v)
}

fn poly_from(c: &RingContext, raw: &[u64]) -> RingPoly {
    let n = c.degree();
    let residues = (0..3)
        .map(|i| raw[i * n..(i + 1) * n].iter().map(|&x| x % c.modulus(i).value()).collect())
        .collect();
    c.from_residues(residues, Form::Coefficient).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_ops_match_oracle_and_laws(
        (ra, rb, rc) in arb_pair(32),
        log_n in 3usize..=5,
    ) {
        let n = 1 << log_n;
        let c = ctx_n(n);
        let a = poly_from(&c, &ra[..3 * n]);
        let b = poly_from(&c, &rb[..3 * n]);
        let d = poly_from(&c, &rc[..3 * n]);
        let ab = c.mul(&a, &b).unwrap();
        prop_assert_eq!(&ab.residues, &schoolbook(&a, &b, c.chain().primes()));
        prop_assert_eq!(&ab, &c.mul(&b, &a).unwrap());
        prop_assert_eq!(c.mul(&ab, &d).unwrap(), c.mul(&a, &c.mul(&b, &d).unwrap()).unwrap());
        let s = c.add(&a, &b).unwrap();
        prop_assert_eq!(&s, &c.add(&b, &a).unwrap());
        prop_assert_eq!(c.add(&s, &d).unwrap(), c.add(&a, &c.add(&b, &d).unwrap()).unwrap());
        // level drop commutes with addition
        let lhs = c.add(&c.drop_last(&a).unwrap(), &c.drop_last(&b).unwrap()).unwrap();
        prop_assert_eq!(lhs, c.drop_last(&s).unwrap());
    }
}
