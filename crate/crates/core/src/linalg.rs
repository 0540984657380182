//! Dense complex linear algebra shared by the oracle and the free-fermion engine.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_vec(v: &CVector) -> f64 {
    v.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Kronecker product with `a` as the outer (slow) index.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(c)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

fn one_norm(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn hermitian_defect(m: &CMatrix, sign: f64) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj() * sign).norm());
        }
    }
    worst
}

/// Matrix exponential.
///
/// Hermitian and skew-Hermitian inputs go through an eigendecomposition, which
/// keeps unitary propagators unitary to machine precision. Everything else uses
/// scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &CMatrix) -> CMatrix {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let scale = max_abs(a).max(1.0);
    let tol = 1e-14 * scale;
    if hermitian_defect(a, 1.0) <= tol {
        let herm = (a + a.adjoint()) * c(0.5);
        return eigen_exp(&herm, ONE);
    }
    if hermitian_defect(a, -1.0) <= tol {
        // a = i K with K Hermitian
        let k = (a - a.adjoint()) * C64::new(0.0, -0.5);
        return eigen_exp(&k, I);
    }
    pade_exp(a)
}

fn eigen_exp(herm: &CMatrix, factor: C64) -> CMatrix {
    let eig = SymmetricEigen::new(herm.clone());
    let v = &eig.eigenvectors;
    let phases = CVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| (factor * l).exp()));
    let mut scaled = v.clone();
    for (j, p) in phases.iter().enumerate() {
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= *p;
        }
    }
    scaled * v.adjoint()
}

const PADE13: [f64; 14] = [
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

const THETA13: f64 = 5.371920351148152;

fn pade_exp(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * c(2f64.powi(-squarings));
    let b = &PADE13;
    let id = CMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]);
    let u = &a * (&a6 * u_inner + &a6 * c(b[7]) + &a4 * c(b[5]) + &a2 * c(b[3]) + &id * c(b[1]));
    let v_inner = &a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]);
    let v = &a6 * v_inner + &a6 * c(b[6]) + &a4 * c(b[4]) + &a2 * c(b[2]) + &id * c(b[0]);
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Determinant by partial-pivot LU on a copy. Empty matrices have determinant one.
pub fn det(m: &CMatrix) -> C64 {
    if m.nrows() == 0 {
        return ONE;
    }
    m.clone().lu().determinant()
}

/// Integer power by repeated squaring.
pub fn matrix_power(m: &CMatrix, mut k: usize) -> CMatrix {
    let n = m.nrows();
    let mut result = CMatrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}
