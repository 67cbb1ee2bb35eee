//! Small dense linear-algebra helpers that nalgebra does not provide directly.

use nalgebra::DMatrix;

/// Relative size of the last Taylor term at which the series is truncated.
pub const TAYLOR_TOLERANCE: f64 = 1e-12;

/// Norm bound for the scaled matrix before the Taylor series is summed.
const SCALED_NORM_BOUND: f64 = 0.5;

const MAX_TAYLOR_TERMS: usize = 64;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The matrix is divided by `2^s` so that its 1-norm is at most 0.5, the
/// series is summed until the newest term is below [`TAYLOR_TOLERANCE`]
/// relative to the partial sum, and the result is squared `s` times.
/// Nilpotent inputs of index two (`M^2 = 0`) come out exactly as `I + M`.
///
/// # Panics
///
/// Panics if `m` is not square.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(m.is_square(), "expm of a non-square matrix");
    let n = m.nrows();
    let norm = one_norm(m);

    let mut squarings = 0u32;
    if norm > SCALED_NORM_BOUND {
        squarings = (norm / SCALED_NORM_BOUND).log2().ceil() as u32;
    }
    let scaled = m / 2f64.powi(squarings as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for j in 1..=MAX_TAYLOR_TERMS {
        term = &term * &scaled / j as f64;
        let term_norm = one_norm(&term);
        sum += &term;
        if term_norm <= TAYLOR_TOLERANCE * one_norm(&sum) {
            break;
        }
    }

    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance<const R: usize, const C: usize>(
    a: &nalgebra::SMatrix<f64, R, C>,
    b: &nalgebra::SMatrix<f64, R, C>,
) -> f64 {
    (a - b).norm()
}
