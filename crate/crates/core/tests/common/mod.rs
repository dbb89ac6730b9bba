#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use saddle_core::linalg::symmetric_eigen_range;
use saddle_core::ProblemInstance;

/// `c·I − B` with `B ≥ 0` symmetric and sparse, `c` above the spectral radius of `B`.
/// Not diagonally dominant in general.
pub fn random_k_matrix<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let mut b = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            if rng.random_bool(0.6) {
                let v = rng.random::<f64>();
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
        }
    }
    let rho = symmetric_eigen_range(&b).1.max(0.0);
    let c = rho * (1.0 + rng.random_range(0.05..0.5)) + 0.1;
    let mut m = -b;
    for i in 0..d {
        m[(i, i)] = c + rng.random_range(0.0..0.3);
    }
    m
}

pub fn random_instance<R: Rng>(rng: &mut R, d: usize) -> ProblemInstance {
    let m = random_k_matrix(rng, d);
    let r = DVector::from_fn(d, |_, _| rng.random_range(0.5..1.5));
    ProblemInstance::from_parts(m, r).expect("constructed instance is valid")
}

pub fn random_q<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
}
