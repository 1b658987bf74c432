//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct OlsFit {
    pub coef: DVector<f64>,
    pub std_err: DVector<f64>,
    pub residuals: DVector<f64>,
    pub sse: f64,
    pub nobs: usize,
}

impl OlsFit {
    pub fn t_ratio(&self, i: usize) -> f64 {
        self.coef[i] / self.std_err[i]
    }

    /// Residual variance with the `n − k` degrees-of-freedom correction.
    pub fn s2(&self) -> f64 {
        self.sse / (self.nobs - self.coef.len()) as f64
    }
}

/// Ordinary least squares by Householder QR.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InsufficientData {
            needed: k + 1,
            got: n,
        });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * max_diag) {
        return Err(Error::Singular("regressor matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let residuals = y - x * &coef;
    let sse = residuals.norm_squared();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("triangular inverse failed".into()))?;
    let cov_unscaled = &r_inv * r_inv.transpose();
    let s2 = sse / (n - k) as f64;
    let std_err = DVector::from_iterator(k, (0..k).map(|i| (s2 * cov_unscaled[(i, i)]).sqrt()));
    Ok(OlsFit {
        coef,
        std_err,
        residuals,
        sse,
        nobs: n,
    })
}

/// Solves a symmetric positive-definite system by Cholesky factorisation.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("system is not positive definite".into()))?;
    Ok(chol.solve(b))
}
