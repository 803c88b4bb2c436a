mod common;

use common::{rng, toy};
use dhe_core::approx::{
    eval_poly_enc, eval_poly_plain, fit_points, fit_poly_grad, loss_grad_exact, loss_value, table2_coeffs, ApproxError,
    LossKind, PolyApprox, DEFAULT_INTERVAL, DEFAULT_SAMPLES,
};
use dhe_core::he::HeBackend;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn loss_values() {
    assert_eq!(loss_value(LossKind::SvmHinge, 2.0), 0.0);
    assert_eq!(loss_value(LossKind::SvmHinge, 0.0), 1.0);
    assert!((loss_value(LossKind::BinomialDeviance, 0.0) - 2f64.ln()).abs() < 1e-15);
    assert_eq!(loss_value(LossKind::Huber, -2.0), 8.0);
    assert_eq!(loss_value(LossKind::Huber, 0.0), 1.0);
    // no overflow far out in the tails
    assert!((loss_value(LossKind::BinomialDeviance, -800.0f64) - 800.0).abs() < 1e-9);
    assert!(loss_value(LossKind::BinomialDeviance, 800.0) >= 0.0);
    assert!(loss_value(LossKind::BinomialDeviance, 800.0f32).is_finite());
}

#[test]
fn kinks_use_left_limits() {
    assert_eq!(loss_grad_exact(LossKind::SvmHinge, 1.0), -1.0);
    assert_eq!(loss_grad_exact(LossKind::SvmHinge, 1.0 + 1e-12), 0.0);
    assert_eq!(loss_grad_exact(LossKind::Huber, -1.0), -4.0);
    assert_eq!(loss_grad_exact(LossKind::Huber, 1.0), 0.0);
}

proptest! {
    #[test]
    fn gradients_match_finite_differences(m in -6.0f64..6.0, k in 0usize..3) {
        let kind = LossKind::ALL[k];
        // stay clear of the kinks at +-1
        prop_assume!((m.abs() - 1.0).abs() > 1e-3);
        let h = 1e-6;
        let fd = (loss_value(kind, m + h) - loss_value(kind, m - h)) / (2.0 * h);
        prop_assert!((fd - loss_grad_exact(kind, m)).abs() < 1e-5);
    }
}

#[test]
fn table2_reference_values() {
    let d = table2_coeffs::<f64>(LossKind::BinomialDeviance);
    assert_eq!(d.coeffs, [0.5, -0.0843, 0.0, 0.0002]);
    assert_eq!(table2_coeffs::<f64>(LossKind::SvmHinge).coeffs, [0.5875, -0.1005, 0.0008, -0.00039]);
    assert_eq!(table2_coeffs::<f64>(LossKind::Huber).coeffs, [2.0, -0.1311, 0.0, 0.00005]);
    assert_eq!(eval_poly_plain(&d, 0.0), 0.5);
    assert!(d.residual > 0.0);
}

#[test]
fn exact_cubic_is_recovered() {
    let truth = [0.3, -1.25, 0.07, 0.004];
    let mut r = rng(1);
    let xs: Vec<f64> = (0..200).map(|_| r.random_range(-8.0..8.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| truth[0] + truth[1] * x + truth[2] * x * x + truth[3] * x * x * x).collect();
    let got = fit_points(&xs, &ys, 3, (-8.0, 8.0)).unwrap();
    for (g, t) in got.iter().zip(truth) {
        assert!((g - t).abs() < 1e-9, "{got:?}");
    }
}

#[test]
fn fit_errors() {
    let mut r = rng(2);
    assert_eq!(
        fit_poly_grad::<f64, _>(LossKind::Huber, 3, (-8.0, 8.0), 39, &mut r),
        Err(ApproxError::TooFewSamples { need: 40, got: 39 })
    );
    assert_eq!(
        fit_poly_grad::<f64, _>(LossKind::Huber, 4, (-8.0, 8.0), 100, &mut r),
        Err(ApproxError::Degree(4))
    );
    // all samples at one point: the monomials are collinear
    assert_eq!(fit_points(&[1.5; 40], &[0.0; 40], 3, (-8.0, 8.0)), Err(ApproxError::FitFailed));
}

#[test]
fn deviance_fit_follows_table2_shape() {
    let p = fit_poly_grad::<f64, _>(LossKind::BinomialDeviance, 3, DEFAULT_INTERVAL, 4000, &mut rng(3)).unwrap();
    let [a0, a1, a2, a3] = p.coeffs;
    assert!((0.4..=0.6).contains(&a0), "{a0}");
    assert!(a1 < 0.0 && a3 > 0.0);
    assert!(a2.abs() < 1e-3);
}

#[test]
fn refits_with_different_seeds_agree() {
    for kind in LossKind::ALL {
        let a = fit_poly_grad::<f64, _>(kind, 3, DEFAULT_INTERVAL, DEFAULT_SAMPLES, &mut rng(10)).unwrap();
        let b = fit_poly_grad::<f64, _>(kind, 3, DEFAULT_INTERVAL, DEFAULT_SAMPLES, &mut rng(11)).unwrap();
        let gap = (0..=1600)
            .map(|k| -8.0 + k as f64 * 0.01)
            .map(|x| (a.eval(x) - b.eval(x)).abs())
            .fold(0.0, f64::max);
        assert!(gap < 0.01, "{kind}: {gap}");
    }
}

#[test]
fn residual_bounds_the_error_off_kink() {
    let mut r = rng(4);
    for kind in LossKind::ALL {
        let p = fit_poly_grad::<f64, _>(kind, 3, DEFAULT_INTERVAL, 2000, &mut r).unwrap();
        for _ in 0..2000 {
            let x: f64 = r.random_range(-8.0..8.0);
            if (x.abs() - 1.0).abs() < 1e-3 {
                continue;
            }
            // the dense grid misses the true sup by at most the slope times half a step
            let err = (p.eval(x) + loss_grad_exact(kind, x)).abs();
            assert!(err <= p.residual + 1e-3, "{kind} at {x}: {err} > {}", p.residual);
        }
    }
}

#[test]
fn generic_over_f32() {
    let p: PolyApprox<f32> = fit_poly_grad(LossKind::BinomialDeviance, 3, (-8.0f32, 8.0), 400, &mut rng(5)).unwrap();
    let q = p.to_f64();
    assert!((q.coeffs[0] - 0.5).abs() < 0.05);
    assert!(p.residual < 0.2);
}

#[test]
fn coefficient_text_round_trip() {
    let t = table2_coeffs::<f64>(LossKind::SvmHinge);
    let s = t.coeff_string();
    assert_eq!(PolyApprox::<f64>::parse_coeffs(&s).unwrap(), t.coeffs);
    assert_eq!(PolyApprox::<f64>::parse_coeffs("1, 2").unwrap(), [1.0, 2.0, 0.0, 0.0]);
    assert!(PolyApprox::<f64>::parse_coeffs("1,2,3,4,5").is_err());
    assert!(PolyApprox::<f64>::parse_coeffs("a").is_err());
    assert_eq!("hinge".parse::<LossKind>().unwrap(), LossKind::SvmHinge);
    assert!("square".parse::<LossKind>().is_err());
}

#[test]
fn encrypted_evaluation() {
    let (he, sk) = toy();
    let mut r = rng(6);
    let slots = he.params().slots();

    let id = PolyApprox::new(LossKind::BinomialDeviance, [0.0, 1.0, 0.0, 0.0], DEFAULT_INTERVAL);
    let ct = he.encrypt(&[0.7], 6, &mut r).unwrap();
    let out = eval_poly_enc(he, &id, &ct).unwrap();
    assert!((he.decrypt(sk, &out).unwrap()[0] - 0.7).abs() < 1e-3);

    let xs: Vec<f64> = (0..100).map(|_| r.random_range(-4.0..4.0)).collect();
    for kind in LossKind::ALL {
        let p = table2_coeffs::<f64>(kind);
        let ct = he.encrypt(&xs, 5, &mut r).unwrap();
        let out = eval_poly_enc(he, &p, &ct).unwrap();
        assert_eq!(he.level(&out), 3);
        let got = he.decrypt(sk, &out).unwrap();
        let mut want: Vec<f64> = xs.iter().map(|&x| p.eval(x)).collect();
        // unused slots hold p(0)
        want.resize(slots, p.eval(0.0));
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-2);
        }
        assert!(he.within_bounds(sk, &out, &want).unwrap());
    }

    let low = he.encrypt(&xs, 1, &mut r).unwrap();
    assert!(eval_poly_enc(he, &id, &low).is_err());
}
