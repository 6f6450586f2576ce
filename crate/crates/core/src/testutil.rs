//! Shared proptest strategies.

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fock::UnitaryMatrix;
use crate::mesh::haar_unitary;
use crate::qubit::RiemannPoint;

pub fn finite_point() -> impl Strategy<Value = RiemannPoint> {
    (-4.0..4.0f64, -4.0..4.0f64).prop_map(|(a, b)| RiemannPoint::finite(C64::new(a, b)))
}

/// Mostly Haar-random points with the poles mixed in.
pub fn point() -> impl Strategy<Value = RiemannPoint> {
    prop_oneof![
        6 => any::<u64>().prop_map(|s| RiemannPoint::sample_haar(&mut ChaCha8Rng::seed_from_u64(s))),
        2 => finite_point(),
        1 => Just(RiemannPoint::zero()),
        1 => Just(RiemannPoint::infinity()),
    ]
}

pub fn haar(n: usize) -> impl Strategy<Value = UnitaryMatrix> {
    any::<u64>().prop_map(move |s| haar_unitary(n, &mut ChaCha8Rng::seed_from_u64(s)))
}

pub fn overlap() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 1 => Just(1.0), 6 => 0.0..=1.0f64]
}
