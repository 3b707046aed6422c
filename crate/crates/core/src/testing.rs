//! Seeded random fixtures used by tests and the acceptance suite.

use crate::operators::{DenseOperator, NoiseModel};
use crate::{C64, CMatrix, CVector};
use rand::Rng;

/// Uniform random complex matrix with entries in the unit square.
pub fn random_matrix<R: Rng>(dim: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_shape_fn((dim, dim), |_| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Random Hermitian matrix, `(A + A†)/2`.
pub fn random_hermitian<R: Rng>(dim: usize, rng: &mut R) -> CMatrix {
    let a = random_matrix(dim, rng);
    let at = crate::linalg::adjoint(&a);
    (&a + &at).mapv(|z| z * 0.5)
}

/// Random unit-norm state vector.
pub fn random_state<R: Rng>(dim: usize, rng: &mut R) -> CVector {
    let mut v = CVector::from_shape_fn(dim, |_| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let n = crate::linalg::norm2(&v);
    v.mapv_inplace(|z| z / n);
    v
}

/// Two random orthonormal states (Gram–Schmidt on random vectors).
pub fn random_orthonormal_pair<R: Rng>(dim: usize, rng: &mut R) -> (CVector, CVector) {
    let a = random_state(dim, rng);
    loop {
        let mut b = random_state(dim, rng);
        let overlap: C64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
        b.zip_mut_with(&a, |bi, &ai| *bi -= overlap * ai);
        let n = crate::linalg::norm2(&b);
        if n > 1e-6 {
            b.mapv_inplace(|z| z / n);
            return (a, b);
        }
    }
}

/// Random 2x2 complex matrix embedded on one site, scaled by `strength`.
pub fn random_single_site_operator<R: Rng>(
    n: usize,
    site: usize,
    strength: f64,
    rng: &mut R,
) -> CMatrix {
    let local = random_matrix(2, rng).mapv(|z| z * strength);
    crate::operators::embed_single_site(&local.view(), site, n)
}

/// Noise model with `count` random strictly single-site Lindblad operators
/// (random sites) and a random traceless single-site error Hamiltonian.
pub fn random_local_noise<R: Rng>(n: usize, strength: f64, count: usize, rng: &mut R) -> NoiseModel {
    let dim = 1usize << n;
    let mut lindblads = Vec::with_capacity(count);
    for _ in 0..count {
        let site = rng.random_range(0..n);
        lindblads.push(
            DenseOperator::new(random_single_site_operator(n, site, strength, rng)).unwrap(),
        );
    }
    let mut h_err = CMatrix::zeros((dim, dim));
    for site in 0..n {
        let mut local = random_hermitian(2, rng);
        let tr = (local[(0, 0)] + local[(1, 1)]) / 2.0;
        local[(0, 0)] -= tr;
        local[(1, 1)] -= tr;
        h_err = h_err + crate::operators::embed_single_site(&local.mapv(|z| z * strength).view(), site, n);
    }
    NoiseModel::custom(lindblads, DenseOperator::new(h_err).unwrap(), 1.0, 0.0).unwrap()
}

/// max |a - b| over matched entries.
pub fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// Max entrywise distance between two complex vectors.
pub fn max_diff_vec(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// Assert helper for scalar closeness with a labelled message.
pub fn assert_close(actual: f64, expected: f64, tol: f64, label: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{label}: got {actual:.15e}, expected {expected:.15e} (tol {tol:.1e}, diff {:.3e})",
        (actual - expected).abs()
    );
}
