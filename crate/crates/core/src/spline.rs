//! Natural cubic smoothing splines with a fixed smoothing parameter.
//!
//! The fit minimises `Σ (y_i − g(x_i))² + λ ∫ g''(x)² dx` over natural cubic
//! splines on a given knot set. A natural spline on knots `l_1 < … < l_K` is
//! determined by its knot values `g`; its second derivatives `γ` (zero at both
//! ends) satisfy `Qᵀg = Rγ` and the roughness is `γᵀRγ`. Knot values are
//! parameterised as `g = T a + Q b` with `T` spanning linear functions, which
//! keeps the normal system well conditioned from interpolation (`λ → 0`) to
//! the least-squares line (`λ → ∞`).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::timeseries::{median, quantile_sorted};

/// Inverse-gamma prior on the smoothing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl PriorSpec {
    pub const REFERENCE: PriorSpec = PriorSpec {
        alpha: 10.0,
        beta: 4.7988,
    };
}

/// Prior mean `β / (α − 1)`, used as the fixed smoothing parameter.
pub fn lambda_from_prior(prior: PriorSpec) -> Result<f64> {
    if !(prior.alpha > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse-gamma mean undefined for alpha = {}",
            prior.alpha
        )));
    }
    if !(prior.beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse-gamma scale must be positive, got {}",
            prior.beta
        )));
    }
    Ok(prior.beta / (prior.alpha - 1.0))
}

/// Knots at the `j / n_quantiles` empirical quantiles of `xs`,
/// `j = 0..=n_quantiles`, with coincident knots merged. With no more points
/// than quantile boundaries the points themselves are the knots.
pub fn select_knots(xs: &[f64], n_quantiles: usize) -> Result<Vec<f64>> {
    if n_quantiles == 0 {
        return Err(Error::InvalidArgument("n_quantiles must be positive".into()));
    }
    check_increasing(xs)?;
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: xs.len(),
        });
    }
    if xs.len() <= n_quantiles + 1 {
        return Ok(xs.to_vec());
    }
    let span = xs[xs.len() - 1] - xs[0];
    let mut knots: Vec<f64> = Vec::with_capacity(n_quantiles + 1);
    for j in 0..=n_quantiles {
        let q = quantile_sorted(xs, j as f64 / n_quantiles as f64);
        match knots.last() {
            Some(&last) if q - last <= 1e-12 * span => {}
            _ => knots.push(q),
        }
    }
    Ok(knots)
}

fn check_increasing(xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite abscissa".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "abscissae must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Cubic `a + b t + c t² + d t³` with `t = x − left` on `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSegment {
    pub left: f64,
    pub right: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl CubicSegment {
    pub fn eval(&self, x: f64) -> f64 {
        let t = x - self.left;
        self.a + t * (self.b + t * (self.c + t * self.d))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let t = x - self.left;
        self.b + t * (2.0 * self.c + 3.0 * t * self.d)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        2.0 * self.c + 6.0 * self.d * (x - self.left)
    }

    /// Exact `∫ g''²` over the segment; `g''` is linear here.
    pub fn roughness(&self) -> f64 {
        let h = self.right - self.left;
        4.0 * self.c * self.c * h + 12.0 * self.c * self.d * h * h + 12.0 * self.d * self.d * h * h * h
    }

    /// Coefficients `(α, β, γ, δ)` of `α x³ + β x² + γ x + δ` in the global
    /// variable.
    pub fn monomial(&self) -> [f64; 4] {
        let l = self.left;
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        [
            d,
            c - 3.0 * d * l,
            b - 2.0 * c * l + 3.0 * d * l * l,
            a - b * l + c * l * l - d * l * l * l,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFit {
    pub knots: Vec<f64>,
    pub segments: Vec<CubicSegment>,
    pub lambda: f64,
    pub xs: Vec<f64>,
    /// `g(x_i)` at the data abscissae.
    pub fitted: Vec<f64>,
}

impl SplineFit {
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn segment_for(&self, x: f64) -> Result<&CubicSegment> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfDomain { x, lo, hi });
        }
        let i = self.knots.partition_point(|k| *k <= x).saturating_sub(1);
        Ok(&self.segments[i.min(self.segments.len() - 1)])
    }

    pub fn predict(&self, x: f64) -> Result<f64> {
        Ok(self.segment_for(x)?.eval(x))
    }

    /// `∫ g''²` over the knot span.
    pub fn roughness(&self) -> f64 {
        self.segments.iter().map(CubicSegment::roughness).sum()
    }

    pub fn residual_sum_of_squares(&self, ys: &[f64]) -> f64 {
        ys.iter().zip(&self.fitted).map(|(y, f)| (y - f).powi(2)).sum()
    }

    /// The penalised objective at this fit.
    pub fn objective(&self, ys: &[f64]) -> f64 {
        self.residual_sum_of_squares(ys) + self.lambda * self.roughness()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "fitted"])?;
        for (x, f) in self.xs.iter().zip(&self.fitted) {
            wtr.write_record([format!("{x}"), format!("{f:.6}")])?;
        }
        wtr.flush().map_err(|e| Error::io("<spline csv>", e))?;
        Ok(())
    }

    pub fn metadata(&self, ys: &[f64]) -> SplineMetadata {
        SplineMetadata {
            lambda: self.lambda,
            knots: self.knots.clone(),
            mse: self.residual_sum_of_squares(ys) / ys.len() as f64,
            median: stable_price(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineMetadata {
    pub lambda: f64,
    pub knots: Vec<f64>,
    pub mse: f64,
    pub median: f64,
}

/// Natural-spline structure on a knot vector.
struct KnotStructure {
    h: Vec<f64>,
    /// `K × (K−2)`.
    q: DMatrix<f64>,
    /// `(K−2) × (K−2)`, tridiagonal.
    r: DMatrix<f64>,
}

impl KnotStructure {
    fn new(knots: &[f64]) -> Self {
        let k = knots.len();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let m = k.saturating_sub(2);
        let mut q = DMatrix::zeros(k, m);
        let mut r = DMatrix::zeros(m, m);
        for j in 1..k.saturating_sub(1) {
            let c = j - 1;
            q[(j - 1, c)] = 1.0 / h[j - 1];
            q[(j, c)] = -1.0 / h[j - 1] - 1.0 / h[j];
            q[(j + 1, c)] = 1.0 / h[j];
            r[(c, c)] = (h[j - 1] + h[j]) / 3.0;
            if c + 1 < m {
                r[(c, c + 1)] = h[j] / 6.0;
                r[(c + 1, c)] = h[j] / 6.0;
            }
        }
        Self { h, q, r }
    }

    /// Interior second derivatives as a linear map of the knot values:
    /// `γ = R⁻¹ Qᵀ g`, shape `(K−2) × K`.
    fn gamma_map(&self) -> Result<DMatrix<f64>> {
        let m = self.r.nrows();
        if m == 0 {
            return Ok(DMatrix::zeros(0, self.q.nrows()));
        }
        let chol = self
            .r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("knot spacing matrix".into()))?;
        Ok(chol.solve(&self.q.transpose()))
    }
}

/// Fits the penalised natural cubic spline on `knots`.
///
/// `xs` must be strictly increasing and lie inside `[knots[0], knots[K−1]]`.
pub fn fit(xs: &[f64], ys: &[f64], lambda: f64, knots: &[f64]) -> Result<SplineFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "{} abscissae but {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Singular(format!("invalid smoothing parameter {lambda}")));
    }
    check_increasing(xs)?;
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: xs.len(),
        });
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite ordinate".into()));
    }
    if knots.len() < 2 {
        return Err(Error::InvalidArgument("need at least two knots".into()));
    }
    if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Singular(
            "knots must be strictly increasing (duplicate knots)".into(),
        ));
    }
    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
    if let Some(&x) = xs.iter().find(|&&x| x < lo || x > hi) {
        return Err(Error::OutOfDomain { x, lo, hi });
    }

    let k = knots.len();
    let n = xs.len();
    let ks = KnotStructure::new(knots);
    let gamma_map = ks.gamma_map()?;

    // Basis evaluation: g(x) = A(x)·g + C(x)·γ_interior.
    let mut design_g = DMatrix::zeros(n, k);
    for (row, &x) in xs.iter().enumerate() {
        let i = knots.partition_point(|l| *l <= x).saturating_sub(1).min(k - 2);
        let h = ks.h[i];
        let tl = x - knots[i];
        let tr = knots[i + 1] - x;
        design_g[(row, i)] += tr / h;
        design_g[(row, i + 1)] += tl / h;
        let w = -tl * tr / 6.0;
        // γ_i weight and γ_{i+1} weight; only interior γ's are free.
        let wi = w * (1.0 + tr / h);
        let wi1 = w * (1.0 + tl / h);
        if i >= 1 {
            let g_row = gamma_map.row(i - 1).clone_owned();
            for c in 0..k {
                design_g[(row, c)] += wi * g_row[c];
            }
        }
        if i < k - 2 {
            let g_row = gamma_map.row(i).clone_owned();
            for c in 0..k {
                design_g[(row, c)] += wi1 * g_row[c];
            }
        }
    }

    // g = T a + Q b with T = [1, (l − mean)/sd].
    let mean_l = knots.iter().sum::<f64>() / k as f64;
    let sd_l = (knots.iter().map(|l| (l - mean_l).powi(2)).sum::<f64>() / k as f64).sqrt();
    let m = k - 2;
    let mut basis = DMatrix::zeros(k, k);
    for j in 0..k {
        basis[(j, 0)] = 1.0;
        basis[(j, 1)] = (knots[j] - mean_l) / sd_l;
    }
    for c in 0..m {
        for j in 0..k {
            basis[(j, 2 + c)] = ks.q[(j, c)];
        }
    }
    let b = &design_g * &basis;
    let y = DVector::from_column_slice(ys);
    let mut system = b.transpose() * &b;
    if m > 0 && lambda > 0.0 {
        // Penalty on b: (QᵀQ) R⁻¹ (QᵀQ).
        let qtq = ks.q.transpose() * &ks.q;
        let chol = ks
            .r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("knot spacing matrix".into()))?;
        let s = &qtq * chol.solve(&qtq);
        for i in 0..m {
            for j in 0..m {
                system[(2 + i, 2 + j)] += lambda * s[(i, j)];
            }
        }
    }
    let rhs = b.transpose() * &y;

    // Symmetric diagonal equilibration before Cholesky.
    let scale: Vec<f64> = (0..k)
        .map(|i| {
            let d = system[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = system.clone();
    for i in 0..k {
        for j in 0..k {
            scaled[(i, j)] *= scale[i] * scale[j];
        }
    }
    let scaled_rhs = DVector::from_iterator(k, (0..k).map(|i| rhs[i] * scale[i]));
    let sol = solve_spd(scaled, &scaled_rhs).map_err(|_| {
        Error::Singular("penalised normal system is not positive definite".into())
    })?;
    let coef = DVector::from_iterator(k, (0..k).map(|i| sol[i] * scale[i]));

    let g = &basis * &coef;
    let gamma_interior = &gamma_map * &g;
    let mut gamma = vec![0.0; k];
    for c in 0..m {
        gamma[c + 1] = gamma_interior[c];
    }
    let segments: Vec<CubicSegment> = (0..k - 1)
        .map(|i| {
            let h = ks.h[i];
            CubicSegment {
                left: knots[i],
                right: knots[i + 1],
                a: g[i],
                b: (g[i + 1] - g[i]) / h - h * (2.0 * gamma[i] + gamma[i + 1]) / 6.0,
                c: gamma[i] / 2.0,
                d: (gamma[i + 1] - gamma[i]) / (6.0 * h),
            }
        })
        .collect();
    let mut fit = SplineFit {
        knots: knots.to_vec(),
        segments,
        lambda,
        xs: xs.to_vec(),
        fitted: Vec::new(),
    };
    fit.fitted = xs
        .iter()
        .map(|&x| fit.predict(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(fit)
}

/// Mean squared residual with divisor `T`.
pub fn spline_mse(fit: &SplineFit, xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InvalidArgument("misaligned inputs".into()));
    }
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sum += (y - fit.predict(*x)?).powi(2);
    }
    Ok(sum / xs.len() as f64)
}

/// Median of the fitted values (midpoint rule for even counts).
pub fn stable_price(fit: &SplineFit) -> f64 {
    median(&fit.fitted)
}
