//! Small dense complex linear-algebra helpers shared across the crate:
//! Kronecker products, column-stacking vectorization and a Padé-13
//! scaling-and-squaring matrix exponential.

use crate::{C64, CMatrix, CVector, Error, Result};
use ndarray::prelude::*;
use ndarray_linalg::{Factorize, Solve};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMatrix::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(b, |o, &bkl| *o = aij * bkl);
        }
    }
    out
}

/// Column-stacking vectorization: `vec(m)[j*rows + i] = m[(i, j)]`.
pub fn vec_col(m: &CMatrix) -> CVector {
    let (rows, cols) = m.dim();
    let mut v = CVector::zeros(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            v[j * rows + i] = m[(i, j)];
        }
    }
    v
}

/// Inverse of [`vec_col`] for a square matrix of side `dim`.
pub fn unvec_col(v: &CVector, dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros((dim, dim));
    for j in 0..dim {
        for i in 0..dim {
            m[(i, j)] = v[j * dim + i];
        }
    }
    m
}

/// Outer product `u v†`.
pub fn dyad(u: &CVector, v: &CVector) -> CMatrix {
    let n = u.len();
    let m = v.len();
    let mut out = CMatrix::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            out[(i, j)] = u[i] * v[j].conj();
        }
    }
    out
}

/// Conjugate transpose.
pub fn adjoint(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm2(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Max-column-sum (induced 1-) norm, used to pick the expm scaling power.
fn norm_1(m: &CMatrix) -> f64 {
    let mut best = 0.0f64;
    for col in m.columns() {
        let s: f64 = col.iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Hermitian eigendecomposition with ascending eigenvalues and eigenvector
/// COLUMNS aligned to them.
///
/// The backend's complex `eigh` can hand back conjugated eigenvectors
/// (invisible for real-symmetric input); pick whichever convention
/// actually diagonalizes.
pub fn hermitian_eig(h: &CMatrix) -> Result<(Array1<f64>, CMatrix)> {
    use ndarray_linalg::{Eigh, UPLO};
    let (e, v) = h.eigh(UPLO::Lower)?;
    let direct = eig_residual(h, &e, &v);
    let vc = v.mapv(|z| z.conj());
    let conjugated = eig_residual(h, &e, &vc);
    if conjugated < direct {
        Ok((e, vc))
    } else {
        Ok((e, v))
    }
}

fn eig_residual(h: &CMatrix, e: &Array1<f64>, v: &CMatrix) -> f64 {
    let hv = h.dot(v);
    let mut ve = v.clone();
    for (j, &ej) in e.iter().enumerate() {
        ve.column_mut(j).mapv_inplace(|z| z * ej);
    }
    max_abs(&(&hv - &ve))
}

const PADE13_THETA: f64 = 5.371920351148152;
const PADE13_B: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by Padé-13 approximation with scaling and squaring.
///
/// Accurate to roughly unit roundoff for well-scaled inputs; this is the
/// propagator builder for the stepper backend.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!(
            "expm needs a square matrix, got {r}x{c}"
        )));
    }
    let norm = norm_1(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / C64::new(2f64.powi(s), 0.0));

    let b = &PADE13_B;
    let ident = CMatrix::eye(r);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = a6.dot(&(&a6 * b[13] + &a4 * b[11] + &a2 * b[9]))
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = scaled.dot(&u_inner);
    let v = a6.dot(&(&a6 * b[12] + &a4 * b[10] + &a2 * b[8]))
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let lhs = &v - &u;
    let rhs = &v + &u;
    let lu = lhs.factorize()?;
    let mut result = CMatrix::zeros((r, r));
    for (j, col) in rhs.columns().into_iter().enumerate() {
        let x = lu.solve(&col.to_owned())?;
        result.column_mut(j).assign(&x);
    }

    for _ in 0..s {
        result = result.dot(&result);
    }
    Ok(result)
}
