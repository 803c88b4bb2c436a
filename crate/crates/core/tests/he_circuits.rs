mod common;

use common::circuits::{check_circuit, random_circuit};
use common::{rng, toy};
use dhe_core::he::{HeBackend, HeParams, Mock};

#[test]
fn tracked_noise_dominates_measured_error_on_lattice() {
    let (he, sk) = toy();
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    for i in 0..120 {
        let c = random_circuit(&mut r, he.params().slots(), 6, 4, 10);
        let check = check_circuit(he, sk, &c, &mut r).unwrap();
        assert!(check.sound, "circuit {i}: {:?}\n{:?}", check, c.ops);
        worst = worst.max(check.worst_ratio);
    }
    // bounds that are never approached would make the noise budget useless
    assert!(worst > 0.05, "{worst}");
}

#[test]
fn mock_backend_respects_its_own_bounds() {
    let params = HeParams::profile("toy", None).unwrap();
    let (he, sk) = Mock::keygen(&params, &mut rng(0));
    let mut r = rng(101);
    for _ in 0..60 {
        let c = random_circuit(&mut r, params.slots(), 6, 4, 10);
        assert!(check_circuit(&he, &sk, &c, &mut r).unwrap().sound);
    }
}
