use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// N = 8192, L = 6 keys, generated once per test binary.
fn big() -> &'static (Lattice, SecretKey) {
    static F: OnceLock<(Lattice, SecretKey)> = OnceLock::new();
    F.get_or_init(|| Lattice::keygen(&HeParams::distributed(), &mut rng(1)))
}

fn small() -> &'static (Lattice, SecretKey) {
    static F: OnceLock<(Lattice, SecretKey)> = OnceLock::new();
    F.get_or_init(|| Lattice::keygen(&HeParams::new(ParamSpec::new("t", 1024, 6)).unwrap(), &mut rng(2)))
}

fn random_vec(n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..=1.0)).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_round_trip() {
    let (he, sk) = big();
    let ct = he.encrypt(&[], 6, &mut rng(3)).unwrap();
    let d = he.decrypt(sk, &ct).unwrap();
    assert!(d.iter().all(|v| v.abs() <= 1e-3));
    assert!(max_err(&d, &vec![0.0; d.len()]) <= he.noise_estimate(&ct));
}

#[test]
fn public_key_identity() {
    let (he, sk) = big();
    let ctx = he.params().ring();
    let pk = &he.keys().pk;
    let s = sk.at_level(ctx, ctx.max_level());
    let e = ctx.add(&pk.b, &ctx.mul(&pk.a, &s).unwrap()).unwrap();
    for i in 0..=ctx.max_level() {
        let coeff = ctx.ntt_inverse(&e).unwrap();
        let q = ctx.modulus(i);
        let norm = coeff.residues(i).iter().map(|&x| q.center(x).unsigned_abs()).max().unwrap();
        assert!(norm as f64 <= 6.0 * 3.2, "prime {i}: {norm}");
    }
}

#[test]
fn keygen_is_deterministic() {
    let p = HeParams::new(ParamSpec::new("t", 64, 2)).unwrap();
    let (a, _) = Lattice::keygen(&p, &mut rng(4));
    let (b, _) = Lattice::keygen(&p, &mut rng(4));
    let (c, _) = Lattice::keygen(&p, &mut rng(5));
    assert_eq!(a.keys(), b.keys());
    assert_ne!(a.keys().pk, c.keys().pk);
}

#[test]
fn encrypt_round_trip() {
    let (he, sk) = big();
    let mut r = rng(6);
    let v = random_vec(he.params().slots(), &mut r);
    let ct = he.encrypt(&v, 6, &mut r).unwrap();
    let d = he.decrypt(sk, &ct).unwrap();
    let err = max_err(&d, &v);
    assert!(err <= 1e-3, "{err}");
    assert!(err <= he.noise_estimate(&ct));
    assert!(he.within_bounds(sk, &ct, &v).unwrap());

    // fresh randomness gives a different ciphertext of the same values
    let ct2 = he.encrypt(&v, 6, &mut r).unwrap();
    assert_ne!(ct.c0, ct2.c0);
    assert!(max_err(&he.decrypt(sk, &ct2).unwrap(), &v) <= 1e-3);
}

#[test]
fn encrypt_rejects_bad_level() {
    let (he, _) = small();
    assert!(matches!(
        he.encrypt(&[1.0], 7, &mut rng(7)),
        Err(HeError::LevelOutOfRange { .. })
    ));
}

#[test]
fn addition() {
    let (he, sk) = big();
    let mut r = rng(8);
    let s = he.params().slots();
    let v = random_vec(s, &mut r);
    let w = random_vec(s, &mut r);
    let u = random_vec(s, &mut r);
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let cv = he.encrypt(&v, 6, &mut r).unwrap();
    let cw = he.encrypt(&w, 6, &mut r).unwrap();
    let cu = he.encrypt(&u, 6, &mut r).unwrap();
    let cn = he.encrypt(&neg, 6, &mut r).unwrap();

    let zero = he.add(&cv, &cn).unwrap();
    assert!(he.measured_error(sk, &zero, &[]).unwrap() <= 1e-3);

    let sum = he.add(&cv, &cw).unwrap();
    let expect: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
    assert!(he.measured_error(sk, &sum, &expect).unwrap() <= he.noise_estimate(&cv) + he.noise_estimate(&cw));
    assert!((he.noise_estimate(&sum) - he.noise_estimate(&cv) - he.noise_estimate(&cw)).abs() < 1e-15);

    let left = he.add(&he.add(&cv, &cw).unwrap(), &cu).unwrap();
    let right = he.add(&cv, &he.add(&cw, &cu).unwrap()).unwrap();
    let dl = he.decrypt(sk, &left).unwrap();
    let dr = he.decrypt(sk, &right).unwrap();
    assert!(max_err(&dl, &dr) <= 1e-6);
}

#[test]
fn add_requires_matching_level() {
    let (he, _) = small();
    let mut r = rng(9);
    let a = he.encrypt(&[1.0], 6, &mut r).unwrap();
    let b = he.encrypt(&[1.0], 5, &mut r).unwrap();
    assert_eq!(he.add(&a, &b).unwrap_err(), HeError::LevelMismatch(6, 5));
    let mut c = b.clone();
    c.level = 6;
    c.scale *= 2.0;
    assert!(matches!(he.mul(&a, &{ c }), Err(HeError::ScaleMismatch(..)) | Err(HeError::Ring(_))));
}

#[test]
fn multiplication() {
    let (he, sk) = big();
    let mut r = rng(10);
    let s = he.params().slots();
    let v = random_vec(s, &mut r);
    let w = random_vec(s, &mut r);
    let cv = he.encrypt(&v, 6, &mut r).unwrap();
    let ones = he.encrypt(&vec![1.0; s], 6, &mut r).unwrap();
    let id = he.mul(&cv, &ones).unwrap();
    assert_eq!(he.level(&id), 5);
    assert_eq!(he.scale(&id), he.params().scale_at(5));
    assert!(he.measured_error(sk, &id, &v).unwrap() <= 1e-3);
    assert!(he.within_bounds(sk, &id, &v).unwrap());

    let cw = he.encrypt(&w, 6, &mut r).unwrap();
    let prod = he.mul(&cv, &cw).unwrap();
    let expect: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a * b).collect();
    assert!(he.measured_error(sk, &prod, &expect).unwrap() <= 1e-2);
    assert!(he.within_bounds(sk, &prod, &expect).unwrap());
    assert!(he.noise_estimate(&prod) >= he.noise_estimate(&cv));
}

#[test]
fn repeated_squaring() {
    let (he, sk) = big();
    let mut ct = he.encrypt(&[0.9], 6, &mut rng(11)).unwrap();
    for _ in 0..4 {
        ct = he.mul(&ct, &ct).unwrap();
    }
    assert_eq!(he.level(&ct), 2);
    let d = he.decrypt(sk, &ct).unwrap();
    assert!((d[0] - 0.9f64.powi(16)).abs() <= 1e-3, "{}", d[0]);
    assert!(he.within_bounds(sk, &ct, &[0.9f64.powi(16)]).unwrap());
}

#[test]
fn depth_exhaustion() {
    let (he, sk) = small();
    let mut r = rng(12);
    let ct = he.encrypt(&[0.5], 0, &mut r).unwrap();
    assert_eq!(he.mul(&ct, &ct).unwrap_err(), HeError::DepthExhausted);
    assert_eq!(he.mul_plain(&ct, &[1.0]).unwrap_err(), HeError::DepthExhausted);
    // level 0 still admits addition
    let sum = he.add(&ct, &ct).unwrap();
    assert!((he.decrypt(sk, &sum).unwrap()[0] - 1.0).abs() < 1e-3);
    let fresh = he.refresh(sk, &ct, 6, &mut r).unwrap();
    assert_eq!(he.level(&fresh), 6);
    let sq = he.mul(&fresh, &fresh).unwrap();
    assert!((he.decrypt(sk, &sq).unwrap()[0] - 0.25).abs() < 1e-3);
}

#[test]
fn refresh_restores_level_and_values() {
    let (he, sk) = big();
    let mut r = rng(13);
    let v = random_vec(64, &mut r);
    let mut ct = he.encrypt(&v, 6, &mut r).unwrap();
    let ones = vec![1.0; 64];
    while he.level(&ct) > 0 {
        ct = he.mul_plain(&ct, &ones).unwrap();
    }
    let before = he.noise_estimate(&ct);
    let fresh = he.refresh(sk, &ct, 6, &mut r).unwrap();
    assert_eq!(he.level(&fresh), 6);
    assert!(he.measured_error(sk, &fresh, &v).unwrap() <= 1e-3);
    assert!(he.noise_estimate(&fresh) <= before);

    let ct = he.encrypt(&v, 6, &mut r).unwrap();
    let again = he.refresh(sk, &ct, 6, &mut r).unwrap();
    let fresh_bound = he.noise_estimate(&ct);
    assert!(he.measured_error(sk, &again, &v).unwrap() <= 2.0 * fresh_bound);
    assert_eq!(he.stats().snapshot().count(OpKind::Refresh), 2);
}

#[test]
fn plaintext_multiply_and_rotation() {
    let (he, sk) = big();
    let mut r = rng(14);
    let s = he.params().slots();
    let v = random_vec(s, &mut r);
    let ct = he.encrypt(&v, 6, &mut r).unwrap();

    let doubled = he.mul_plain(&ct, &vec![2.0; s]).unwrap();
    let expect: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
    assert_eq!(he.level(&doubled), 5);
    assert!(he.measured_error(sk, &doubled, &expect).unwrap() <= 1e-3);

    let same = he.rotate(&ct, 0).unwrap();
    assert_eq!(same, ct);

    for k in [1isize, 3, 100, -7, 2047] {
        let rot = he.rotate(&ct, k).unwrap();
        assert_eq!(he.level(&rot), 6);
        let expect: Vec<f64> = (0..s).map(|j| v[(j as isize + k).rem_euclid(s as isize) as usize]).collect();
        assert!(he.within_bounds(sk, &rot, &expect).unwrap(), "k = {k}");
        let back = he.rotate(&rot, s as isize - k).unwrap();
        assert!(he.measured_error(sk, &back, &v).unwrap() <= 1e-3);
    }
}

#[test]
fn rotation_without_key() {
    let p = HeParams::new(ParamSpec::new("t", 64, 2)).unwrap();
    let (he, _) = Lattice::keygen_with_rotations(&p, &[galois_element(1, 32)], &mut rng(15));
    let ct = he.encrypt(&[1.0], 2, &mut rng(16)).unwrap();
    assert!(he.rotate(&ct, 1).is_ok());
    assert_eq!(he.rotate(&ct, 2).unwrap_err(), HeError::KeyMissing(galois_element(2, 32)));
}

#[test]
fn constants_and_adjust() {
    let (he, sk) = big();
    let mut r = rng(17);
    let v = random_vec(128, &mut r);
    let ct = he.encrypt(&v, 6, &mut r).unwrap();

    let c = he.mul_const(&ct, -0.37).unwrap();
    let expect: Vec<f64> = v.iter().map(|x| -0.37 * x).collect();
    assert!(he.within_bounds(sk, &c, &expect).unwrap());

    let a = he.add_const(&ct, 0.25).unwrap();
    let mut expect: Vec<f64> = v.iter().map(|x| x + 0.25).collect();
    expect.resize(he.params().slots(), 0.25);
    assert!(he.within_bounds(sk, &a, &expect).unwrap());

    let adj = he.adjust_to(&ct, 2, 0.99).unwrap();
    assert_eq!(he.level(&adj), 2);
    assert_eq!(he.scale(&adj), he.params().scale_at(2));
    let expect: Vec<f64> = v.iter().map(|x| 0.99 * x).collect();
    assert!(he.within_bounds(sk, &adj, &expect).unwrap());
    assert!(he.measured_error(sk, &adj, &expect).unwrap() < 1e-3);
    // adjusted ciphertext adds to a native one at that level
    let low = he.encrypt(&v, 2, &mut r).unwrap();
    assert!(he.add(&adj, &low).is_ok());
    assert!(matches!(he.adjust_to(&low, 3, 1.0), Err(HeError::BadTarget { .. })));

    let pv = random_vec(128, &mut r);
    let ap = he.add_plain(&ct, &pv).unwrap();
    let expect: Vec<f64> = v.iter().zip(&pv).map(|(x, y)| x + y).collect();
    assert!(he.within_bounds(sk, &ap, &expect).unwrap());
}

#[test]
fn ciphertext_serialization_round_trip() {
    let (he, sk) = small();
    let mut r = rng(18);
    let v = random_vec(100, &mut r);
    let ct = he.mul(&he.encrypt(&v, 6, &mut r).unwrap(), &he.encrypt(&v, 6, &mut r).unwrap()).unwrap();
    let bytes = he.to_bytes(&ct);
    let back = he.from_bytes(&bytes).unwrap();
    assert_eq!(back.c0, ct.c0);
    assert_eq!(back.c1, ct.c1);
    assert_eq!(back.level, ct.level);
    assert_eq!(back.scale, ct.scale);
    assert_eq!(back.noise_estimate, ct.noise_estimate);
    assert_eq!(he.to_bytes(&back), bytes);
    assert_eq!(he.decrypt(sk, &back).unwrap(), he.decrypt(sk, &ct).unwrap());
    assert!(he.from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = 0;
    assert!(he.from_bytes(&bad).is_err());
}

#[test]
fn public_material_transfers() {
    let (he, sk) = small();
    let bytes = he.export_public();
    let worker = Lattice::import_public(he.params(), &bytes).unwrap();
    let mut r = rng(19);
    let ct = worker.encrypt(&[0.5, 0.25], 6, &mut r).unwrap();
    let sq = worker.rotate(&worker.mul(&ct, &ct).unwrap(), 1).unwrap();
    let d = he.decrypt(sk, &sq).unwrap();
    assert!((d[0] - 0.0625).abs() < 1e-3);
}

#[test]
fn rotation_decomposition() {
    assert_eq!(rotation_steps(0, 16), Vec::<isize>::new());
    assert_eq!(rotation_steps(5, 16), vec![1, 4]);
    assert_eq!(rotation_steps(-1, 16), vec![-1]);
    assert_eq!(rotation_steps(13, 16), vec![-1, -2]);
    assert_eq!(default_rotation_elements(16).len(), 7);
    assert_eq!(galois_element(16, 16), 1);
}

#[test]
fn mock_matches_lattice_bookkeeping() {
    let (he, sk) = small();
    let mock = Mock::new(he.params());
    let mut r = rng(20);
    let v = random_vec(512, &mut r);
    let w = random_vec(512, &mut r);
    let run = |x: &[f64], y: &[f64]| -> (Vec<f64>, usize, f64) {
        let (lat_out, lat_level, lat_noise) = {
            let mut r = rng(21);
            let a = he.encrypt(x, 6, &mut r).unwrap();
            let b = he.encrypt(y, 6, &mut r).unwrap();
            let c = he.rotate(&he.mul(&a, &b).unwrap(), 3).unwrap();
            let c = he.adjust_to(&he.add_const(&c, 0.1).unwrap(), 2, 0.5).unwrap();
            (he.decrypt(sk, &c).unwrap(), he.level(&c), he.noise_estimate(&c))
        };
        let mut r = rng(21);
        let a = mock.encrypt(x, 6, &mut r).unwrap();
        let b = mock.encrypt(y, 6, &mut r).unwrap();
        let c = mock.rotate(&mock.mul(&a, &b).unwrap(), 3).unwrap();
        let c = mock.adjust_to(&mock.add_const(&c, 0.1).unwrap(), 2, 0.5).unwrap();
        assert_eq!(mock.level(&c), lat_level);
        assert_eq!(mock.noise_estimate(&c), lat_noise);
        assert!(mock.within_bounds(&MockSecretKey, &c, &lat_out).unwrap());
        (mock.decrypt(&MockSecretKey, &c).unwrap(), lat_level, lat_noise)
    };
    let (out, _, noise) = run(&v, &w);
    // deterministic under the same seeds
    let (again, _, _) = run(&v, &w);
    assert_eq!(out, again);
    assert!(noise > 0.0);
}
