//! Small dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::{Error, Result, C64};

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve_real(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.lu().solve(b).ok_or(Error::Singular)
}

/// One-norm (max column sum) of a complex matrix.
pub fn norm1(a: &DMatrix<C64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The matrix is scaled so that its one-norm is at most 1/2; the series is
/// summed until the added term falls below machine precision relative to the
/// partial sum.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm = norm1(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = Float::ceil(Float::log2(norm / 0.5)) as u32;
    }
    let scale = Float::powi(0.5, squarings as i32);
    let scaled = a * C64::new(scale, 0.0);

    let mut sum = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled * C64::new(1.0 / k as f64, 0.0);
        sum += &term;
        if norm1(&term) <= f64::EPSILON * norm1(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Eigenvalues of a general complex matrix from its Schur form.
pub fn eigenvalues(a: &DMatrix<C64>) -> Vec<C64> {
    let schur = a.clone().schur();
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Right eigenvector for a known eigenvalue by two steps of inverse iteration.
pub fn eigenvector(a: &DMatrix<C64>, lambda: C64) -> Option<DVector<C64>> {
    let n = a.nrows();
    let scale = norm1(a).max(lambda.norm()).max(f64::MIN_POSITIVE);
    let shift = lambda + C64::new(scale * 1e-10, scale * 1e-10);
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    let mut v = DVector::<C64>::from_fn(n, |i, _| C64::new(1.0, 0.1 * (i as f64 + 1.0)));
    for _ in 0..3 {
        v = lu.solve(&v)?;
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        v /= C64::new(norm, 0.0);
    }
    Some(v)
}

/// Modal decomposition of `x(t) = exp(a t) x0`.
///
/// Returns `(lambda_k, w_k)` such that component `row` of `x(t)` equals
/// `sum_k w_k exp(lambda_k t)`, assuming `a` is diagonalizable.
pub fn modal_weights(a: &DMatrix<C64>, x0: &DVector<C64>, row: usize) -> Option<Vec<(C64, C64)>> {
    let n = a.nrows();
    let lambdas = eigenvalues(a);
    let mut vecs = DMatrix::<C64>::zeros(n, n);
    for (k, &l) in lambdas.iter().enumerate() {
        vecs.set_column(k, &eigenvector(a, l)?);
    }
    let coeffs = vecs.clone().lu().solve(x0)?;
    Some(
        lambdas
            .into_iter()
            .enumerate()
            .map(|(k, l)| (l, vecs[(row, k)] * coeffs[k]))
            .collect(),
    )
}
