//! Dense complex linear algebra helpers on top of `faer`.
//!
//! Operators on the spin sector and on the vectorized operator space are
//! stored as `faer::Mat<c64>`. Vectorization is column stacking:
//! `vec(X)[i + j * n] = X[i, j]`, so that `vec(A X B) = (B^T ⊗ A) vec(X)`.

use faer::linalg::solvers::Solve;
use faer::{c64, Mat, Side};

use crate::error::{Error, Result};

pub type CMat = Mat<c64>;

pub const I: c64 = c64 { re: 0.0, im: 1.0 };
pub const ONE: c64 = c64 { re: 1.0, im: 0.0 };
pub const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

#[inline]
pub fn re(x: f64) -> c64 {
    c64::new(x, 0.0)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    Mat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    Mat::identity(n, n)
}

pub fn dagger(a: &CMat) -> CMat {
    a.as_ref().adjoint().to_owned()
}

pub fn transpose(a: &CMat) -> CMat {
    a.as_ref().transpose().to_owned()
}

pub fn conj(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

pub fn scale(a: &CMat, s: c64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

/// `a + s * b`, in place.
pub fn axpy(a: &mut CMat, s: c64, b: &CMat) {
    debug_assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            a[(i, j)] += s * b[(i, j)];
        }
    }
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn trace(a: &CMat) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Hilbert-Schmidt inner product `Tr[a† b]`.
pub fn hs_inner(a: &CMat, b: &CMat) -> c64 {
    let mut acc = ZERO;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)].conj() * b[(i, j)];
        }
    }
    acc
}

pub fn frobenius(a: &CMat) -> f64 {
    a.norm_l2()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.norm_max()
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm_one(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Column-stacking vectorization.
pub fn vectorize(a: &CMat) -> Vec<c64> {
    let n = a.nrows();
    let mut v = vec![ZERO; n * a.ncols()];
    for j in 0..a.ncols() {
        for i in 0..n {
            v[i + j * n] = a[(i, j)];
        }
    }
    v
}

pub fn devectorize(v: &[c64], n: usize) -> CMat {
    assert_eq!(v.len(), n * n, "vector length is not a square");
    Mat::from_fn(n, n, |i, j| v[i + j * n])
}

pub fn col_from_slice(v: &[c64]) -> CMat {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn mat_vec(a: &CMat, v: &[c64]) -> Vec<c64> {
    assert_eq!(a.ncols(), v.len());
    let mut out = vec![ZERO; a.nrows()];
    for (j, &vj) in v.iter().enumerate() {
        if vj == ZERO {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += a[(i, j)] * vj;
        }
    }
    out
}

pub fn dot_conj(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vec_norm(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn hermitian_part(a: &CMat) -> CMat {
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Largest entry of `a - a†`.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending,
/// eigenvectors in the columns of the returned matrix.
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let h = hermitian_part(a);
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let values = evd.S().column_vector().iter().map(|x| x.re).collect();
    Ok((values, evd.U().to_owned()))
}

pub fn eigvalsh(a: &CMat) -> Result<Vec<f64>> {
    let h = hermitian_part(a);
    let vals = h
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    Ok(vals)
}

/// Operator norm of a Hermitian matrix (largest absolute eigenvalue).
pub fn hermitian_norm(a: &CMat) -> Result<f64> {
    Ok(eigvalsh(a)?.into_iter().map(f64::abs).fold(0.0, f64::max))
}

/// Trace distance `½‖a − b‖₁` between Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> Result<f64> {
    let diff = a - b;
    Ok(0.5 * eigvalsh(&diff)?.into_iter().map(f64::abs).sum::<f64>())
}

pub fn solve(a: &CMat, rhs: &CMat) -> CMat {
    a.partial_piv_lu().solve(rhs)
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

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm = norm_one(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = scale(a, re(0.5f64.powi(squarings)));
    let b = &PADE13;
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let mut inner_u = scale(&a6, re(b[13]));
    axpy(&mut inner_u, re(b[11]), &a4);
    axpy(&mut inner_u, re(b[9]), &a2);
    let mut u = &a6 * &inner_u;
    axpy(&mut u, re(b[7]), &a6);
    axpy(&mut u, re(b[5]), &a4);
    axpy(&mut u, re(b[3]), &a2);
    axpy(&mut u, re(b[1]), &id);
    let u = &a * &u;

    let mut inner_v = scale(&a6, re(b[12]));
    axpy(&mut inner_v, re(b[10]), &a4);
    axpy(&mut inner_v, re(b[8]), &a2);
    let mut v = &a6 * &inner_v;
    axpy(&mut v, re(b[6]), &a6);
    axpy(&mut v, re(b[4]), &a4);
    axpy(&mut v, re(b[2]), &a2);
    axpy(&mut v, re(b[0]), &id);

    let mut r = solve(&(&v - &u), &(&v + &u));
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Returns `(exp(a), L(a, e))` where `L` is the Fréchet derivative of the
/// exponential at `a` in direction `e`, read off the upper-right block of
/// `exp([[a, e], [0, a]])`.
pub fn expm_frechet(a: &CMat, e: &CMat) -> (CMat, CMat) {
    let n = a.nrows();
    let block = Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => e[(i, j - n)],
        (false, false) => a[(i - n, j - n)],
        (false, true) => ZERO,
    });
    let ex = expm(&block);
    let top = Mat::from_fn(n, n, |i, j| ex[(i, j)]);
    let deriv = Mat::from_fn(n, n, |i, j| ex[(i, j + n)]);
    (top, deriv)
}
