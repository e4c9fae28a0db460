//! Small dense linear-algebra helpers shared by the filter, the smoother and
//! the differentiable pipeline.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `(m + mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Diagonal jitter applied on the second factorization attempt.
pub fn jitter_for(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    1e-9 * m.trace().abs() / n
}

/// Cholesky factorization that retries once with `1e-9 · trace / dim` added
/// to the diagonal. Returns the lower factor and the jitter that was used.
pub fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    context: &'static str,
) -> Result<(DMatrix<f64>, f64)> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok((ch.unpack(), 0.0));
    }
    let jitter = jitter_for(m);
    let mut shifted = m.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted)
        .map(|ch| (ch.unpack(), jitter))
        .ok_or(Error::NotPositiveDefinite(context))
}

/// Condition number estimate `(max Lᵢᵢ / min Lᵢᵢ)²` from a Cholesky factor.
pub fn condition_from_factor(l: &DMatrix<f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor has a zero on its diagonal")
}

pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("triangular factor has a zero on its diagonal")
}

/// `log det(L Lᵀ)`
pub fn logdet_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Multivariate normal log density evaluated through a Cholesky factor of
/// the covariance.
pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    if mean.len() != n {
        return Err(Error::shape("gaussian_logpdf mean", n, mean.len()));
    }
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::shape(
            "gaussian_logpdf covariance",
            format!("{n}x{n}"),
            format!("{}x{}", cov.nrows(), cov.ncols()),
        ));
    }
    let ch = Cholesky::<f64, Dyn>::new(cov.clone())
        .ok_or(Error::NotPositiveDefinite("gaussian_logpdf"))?;
    let l = ch.l();
    let r = x - mean;
    let alpha = l
        .solve_lower_triangular(&r)
        .ok_or(Error::NotPositiveDefinite("gaussian_logpdf"))?;
    Ok(-0.5 * (n as f64 * LN_2PI + logdet_from_factor(&l) + alpha.norm_squared()))
}

/// Log density given an already-factored covariance.
pub(crate) fn logpdf_with_factor(residual: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let n = residual.len() as f64;
    let alpha = l
        .solve_lower_triangular(residual)
        .expect("triangular factor has a zero on its diagonal");
    -0.5 * (n * LN_2PI + logdet_from_factor(l) + alpha.norm_squared())
}

pub(crate) const LOG_2PI: f64 = LN_2PI;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
