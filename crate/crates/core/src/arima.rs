//! ARIMA(p, d, q) estimation by conditional sum of squares, AIC-based model
//! selection and the MA(1) ↔ AR(∞) / AR(1) ↔ MA(∞) expansions.
//!
//! Sign convention for the differenced series `w_t`:
//!
//! ```text
//! w_t − μ = Σ ρ_i (w_{t−i} − μ) + ε_t − Σ θ_j ε_{t−j}
//! ```
//!
//! so the one-step prediction is `ŵ_t = μ + Σ ρ_i (w_{t−i} − μ) − Σ θ_j ε_{t−j}`.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ols;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::timeseries::{difference, median, MonthlySeries};

pub const MAX_P: usize = 5;
pub const MAX_D: usize = 2;
pub const MAX_Q: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub include_mean: bool,
}

impl ArimaSpec {
    /// Mean included only for undifferenced models.
    pub fn new(p: usize, d: usize, q: usize) -> Self {
        Self {
            p,
            d,
            q,
            include_mean: d == 0,
        }
    }

    pub fn with_mean(mut self, include_mean: bool) -> Self {
        self.include_mean = include_mean;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > MAX_P || self.d > MAX_D || self.q > MAX_Q {
            return Err(Error::InvalidArgument(format!(
                "{self} exceeds supported orders p<={MAX_P}, d<={MAX_D}, q<={MAX_Q}"
            )));
        }
        Ok(())
    }

    /// Parameters counted by AIC, including the innovation variance.
    pub fn n_params(&self) -> usize {
        self.p + self.q + usize::from(self.include_mean) + 1
    }

    fn n_free(&self) -> usize {
        self.p + self.q + usize::from(self.include_mean)
    }
}

impl fmt::Display for ArimaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ARIMA({},{},{})", self.p, self.d, self.q)
    }
}

/// The nine candidate specifications compared in the reference study.
pub fn default_candidates() -> Vec<ArimaSpec> {
    [
        (1, 0, 0),
        (0, 0, 1),
        (0, 1, 0),
        (1, 1, 0),
        (0, 1, 1),
        (2, 0, 0),
        (0, 0, 2),
        (1, 0, 1),
        (2, 0, 3),
    ]
    .into_iter()
    .map(|(p, d, q)| ArimaSpec::new(p, d, q))
    .collect()
}

/// AIC values reported for [`default_candidates`] on the original
/// (unavailable) 14-month series, in the same order.
pub const REFERENCE_AIC: [f64; 9] = [
    -166.50, -168.30, -148.86, -151.84, -152.39, -164.74, -167.23, -166.88, -166.57,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub spec: ArimaSpec,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub mean: f64,
    /// Innovation variance `SSE / n` on the differenced scale.
    pub sigma2: f64,
    pub loglik: f64,
    pub aic: f64,
    /// One-step fitted values on the original scale; starts `d` months after
    /// the input series.
    pub fitted: MonthlySeries,
    pub residuals: MonthlySeries,
    /// The `d`-times differenced input.
    pub differenced: MonthlySeries,
    /// Asymptotic standard errors for `ar`, `ma`, then `mean` (if included),
    /// from the numerical Hessian of the concentrated log-likelihood. `None`
    /// if the Hessian is not positive definite.
    pub std_errors: Option<Vec<f64>>,
}

impl ArimaFit {
    /// `ŵ_t = w_t − ε̂_t`.
    pub fn fitted_differenced(&self) -> Vec<f64> {
        self.differenced
            .values()
            .iter()
            .zip(self.residuals.values())
            .map(|(w, e)| w - e)
            .collect()
    }

    pub fn nobs(&self) -> usize {
        self.residuals.len()
    }
}

/// `2m − 2 ln L̂`.
pub fn aic_from(loglik: f64, n_params: usize) -> f64 {
    2.0 * n_params as f64 - 2.0 * loglik
}

pub fn aic(fit: &ArimaFit) -> f64 {
    aic_from(fit.loglik, fit.spec.n_params())
}

/// Gaussian log-likelihood at `σ̂² = SSE / n`.
pub fn concentrated_loglik(sse: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * std::f64::consts::PI * sse / n).ln() + 1.0)
}

/// Whether `1 − Σ c_i z^i` has all roots outside the unit circle, by the
/// Levinson step-down recursion on reflection coefficients.
pub fn roots_outside_unit_circle(coeffs: &[f64]) -> bool {
    let mut a = coeffs.to_vec();
    while let Some(&last) = a.last() {
        if last == 0.0 {
            a.pop();
        } else {
            break;
        }
    }
    for k in (1..=a.len()).rev() {
        let kappa = a[k - 1];
        if !kappa.is_finite() || kappa.abs() >= 1.0 {
            return false;
        }
        let denom = 1.0 - kappa * kappa;
        let prev: Vec<f64> = (1..k).map(|j| (a[j - 1] + kappa * a[k - j - 1]) / denom).collect();
        a = prev;
    }
    true
}

/// CSS residuals with zero pre-sample deviations and innovations.
fn css_residuals(dev: &[f64], ar: &[f64], ma: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for t in 0..dev.len() {
        let mut e = dev[t];
        for (i, r) in ar.iter().enumerate() {
            if t > i {
                e -= r * dev[t - i - 1];
            }
        }
        for (j, th) in ma.iter().enumerate() {
            if t > j {
                e += th * out[t - j - 1];
            }
        }
        out.push(e);
    }
}

struct Problem<'a> {
    spec: ArimaSpec,
    z: &'a [f64],
    scratch_dev: Vec<f64>,
    scratch_e: Vec<f64>,
}

impl Problem<'_> {
    fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64], f64) {
        let (ar, rest) = params.split_at(self.spec.p);
        let (ma, rest) = rest.split_at(self.spec.q);
        let mean = if self.spec.include_mean { rest[0] } else { 0.0 };
        (ar, ma, mean)
    }

    fn sse(&mut self, params: &[f64]) -> f64 {
        let (ar, ma, mean) = self.split(params);
        if !roots_outside_unit_circle(ar) || !roots_outside_unit_circle(ma) {
            return f64::INFINITY;
        }
        self.scratch_dev.clear();
        self.scratch_dev.extend(self.z.iter().map(|v| v - mean));
        css_residuals(&self.scratch_dev, ar, ma, &mut self.scratch_e);
        let sse: f64 = self.scratch_e.iter().map(|e| e * e).sum();
        if sse.is_finite() {
            sse
        } else {
            f64::INFINITY
        }
    }
}

const MAX_RESTARTS: usize = 6;

fn start_values(spec: ArimaSpec, z: &[f64]) -> Vec<f64> {
    let mut params = vec![0.0; spec.n_free()];
    if spec.p > 0 && z.len() > 2 * spec.p + 2 {
        let rows = z.len() - spec.p;
        let mut x = DMatrix::zeros(rows, spec.p + 1);
        let mut y = DVector::zeros(rows);
        for r in 0..rows {
            let t = r + spec.p;
            y[r] = z[t];
            x[(r, 0)] = 1.0;
            for i in 0..spec.p {
                x[(r, i + 1)] = z[t - i - 1];
            }
        }
        if let Ok(fit) = ols(&x, &y) {
            let mut ar: Vec<f64> = fit.coef.iter().skip(1).copied().collect();
            while !roots_outside_unit_circle(&ar) {
                ar.iter_mut().for_each(|a| *a *= 0.5);
            }
            params[..spec.p].copy_from_slice(&ar);
        }
    }
    params
}

/// Fits an ARIMA model by conditional sum of squares refined with
/// Nelder-Mead, rejecting steps outside the stationary and invertible region.
///
/// Deterministic: identical inputs give bit-identical outputs.
pub fn fit(series: &MonthlySeries, spec: ArimaSpec) -> Result<ArimaFit> {
    spec.validate()?;
    let needed = spec.p + spec.d + spec.q + 3;
    if series.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: series.len(),
        });
    }
    let differenced = difference(series, spec.d)?;
    let w = differenced.values();
    let n = w.len();

    // Work on a standardised copy; the CSS recursion is affine-equivariant.
    let center = if spec.include_mean {
        w.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let scale = (w.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(scale > 0.0) {
        return Err(Error::DegenerateSeries(format!(
            "{spec}: differenced series has zero variance"
        )));
    }
    let z: Vec<f64> = w.iter().map(|v| (v - center) / scale).collect();

    let mut problem = Problem {
        spec,
        z: &z,
        scratch_dev: Vec::new(),
        scratch_e: Vec::new(),
    };

    let params = if spec.p == 0 && spec.q == 0 {
        // Closed form: the sample mean (0 after centring) minimises the SSE.
        vec![0.0; spec.n_free()]
    } else {
        let opts = NelderMeadOptions::default();
        let mut best = nelder_mead(|x| problem.sse(x), &start_values(spec, &z), opts);
        let mut settled = false;
        for _ in 0..MAX_RESTARTS {
            let next = nelder_mead(|x| problem.sse(x), &best.x, opts);
            let improved = next.f < best.f;
            let stable = (best.f - next.f).abs() <= 1e-10 * (1.0 + best.f.abs());
            if improved {
                best = next;
            }
            if stable && best.converged {
                settled = true;
                break;
            }
        }
        if !settled || !best.f.is_finite() {
            let (ar, ma, mean) = problem.split(&best.x);
            let mut raw: Vec<f64> = ar.iter().chain(ma).copied().collect();
            if spec.include_mean {
                raw.push(center + scale * mean);
            }
            return Err(Error::NonConvergence {
                restarts: MAX_RESTARTS,
                best_objective: best.f * scale * scale,
                best_params: raw,
            });
        }
        best.x
    };

    let (ar_z, ma_z, mean_z) = problem.split(&params);
    let ar = ar_z.to_vec();
    let ma = ma_z.to_vec();
    let mean = if spec.include_mean {
        center + scale * mean_z
    } else {
        0.0
    };

    let dev: Vec<f64> = w.iter().map(|v| v - mean).collect();
    let mut residuals = Vec::with_capacity(n);
    css_residuals(&dev, &ar, &ma, &mut residuals);
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    if !(sse > 0.0) {
        return Err(Error::DegenerateSeries(format!("{spec}: perfect fit")));
    }
    let sigma2 = sse / n as f64;
    let loglik = concentrated_loglik(sse, n);

    let original = &series.values()[spec.d..];
    let fitted_vals: Vec<f64> = original.iter().zip(&residuals).map(|(y, e)| y - e).collect();
    let std_errors = hessian_std_errors(&mut problem, &params, scale, n);

    Ok(ArimaFit {
        spec,
        ar,
        ma,
        mean,
        sigma2,
        loglik,
        aic: aic_from(loglik, spec.n_params()),
        fitted: MonthlySeries::new(differenced.start(), fitted_vals)?,
        residuals: MonthlySeries::new(differenced.start(), residuals)?,
        differenced,
        std_errors,
    })
}

/// Inverse Hessian of `(n/2) ln(SSE/n)` by central differences.
fn hessian_std_errors(
    problem: &mut Problem<'_>,
    params: &[f64],
    scale: f64,
    n: usize,
) -> Option<Vec<f64>> {
    let k = params.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let h = 1e-4;
    let nf = n as f64;
    let mut objective = |x: &[f64]| 0.5 * nf * (problem.sse(x) / nf).ln();
    let f0 = objective(params);
    let mut hess = DMatrix::zeros(k, k);
    let mut x = params.to_vec();
    for i in 0..k {
        for j in i..k {
            let value = if i == j {
                x[i] = params[i] + h;
                let fp = objective(&x);
                x[i] = params[i] - h;
                let fm = objective(&x);
                x[i] = params[i];
                (fp - 2.0 * f0 + fm) / (h * h)
            } else {
                let mut eval = |di: f64, dj: f64| {
                    x[i] = params[i] + di;
                    x[j] = params[j] + dj;
                    let v = objective(&x);
                    x[i] = params[i];
                    x[j] = params[j];
                    v
                };
                (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
            };
            if !value.is_finite() {
                return None;
            }
            hess[(i, j)] = value;
            hess[(j, i)] = value;
        }
    }
    let inv = hess.cholesky()?.inverse();
    let p_q = problem.spec.p + problem.spec.q;
    Some(
        (0..k)
            .map(|i| {
                let se = inv[(i, i)].sqrt();
                if i >= p_q {
                    se * scale
                } else {
                    se
                }
            })
            .collect(),
    )
}

/// Mean squared deviation between the series and the fitted values over the
/// months where both exist (divisor = number of such months).
pub fn mse(fit: &ArimaFit, series: &MonthlySeries) -> f64 {
    fitted_mse(&fit.fitted, series)
}

pub(crate) fn fitted_mse(fitted: &MonthlySeries, series: &MonthlySeries) -> f64 {
    let (sum, count) = fitted
        .iter()
        .filter_map(|(m, f)| series.get(m).map(|y| (y - f).powi(2)))
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

pub fn fitted_median(fit: &ArimaFit) -> f64 {
    median(fit.fitted.values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub spec: ArimaSpec,
    pub loglik: f64,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingFailure {
    pub spec: ArimaSpec,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Converged candidates, best first.
    pub rows: Vec<RankingRow>,
    pub failures: Vec<RankingFailure>,
}

fn rank_order(a: &RankingRow, b: &RankingRow) -> Ordering {
    a.aic
        .total_cmp(&b.aic)
        .then(a.spec.n_params().cmp(&b.spec.n_params()))
        .then((a.spec.p, a.spec.d, a.spec.q).cmp(&(b.spec.p, b.spec.d, b.spec.q)))
}

/// Sorts rows ascending by AIC; ties go to fewer parameters, then to the
/// lexicographically smaller `(p, d, q)`.
pub fn rank_rows(mut rows: Vec<RankingRow>) -> Vec<RankingRow> {
    rows.sort_by(rank_order);
    rows
}

impl Ranking {
    pub fn best(&self) -> Option<&RankingRow> {
        self.rows.first()
    }

    /// CSV with columns `p,d,q,converged,loglik,aic`; failed candidates
    /// follow the ranked rows with empty likelihood columns.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["p", "d", "q", "converged", "loglik", "aic"])?;
        for r in &self.rows {
            wtr.write_record([
                r.spec.p.to_string(),
                r.spec.d.to_string(),
                r.spec.q.to_string(),
                "true".into(),
                format!("{:.4}", r.loglik),
                format!("{:.4}", r.aic),
            ])?;
        }
        for f in &self.failures {
            wtr.write_record([
                f.spec.p.to_string(),
                f.spec.d.to_string(),
                f.spec.q.to_string(),
                "false".into(),
                String::new(),
                String::new(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<ranking csv>", e))?;
        Ok(())
    }
}

/// Fits every candidate and returns the minimum-AIC fit with the ranking.
pub fn select_model(
    series: &MonthlySeries,
    candidates: &[ArimaSpec],
) -> Result<(ArimaFit, Ranking)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate models".into()));
    }
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for &spec in candidates {
        match fit(series, spec) {
            Ok(f) => fits.push(f),
            Err(e) => failures.push(RankingFailure {
                spec,
                reason: e.to_string(),
            }),
        }
    }
    if fits.is_empty() {
        return Err(Error::AllCandidatesFailed(candidates.len()));
    }
    fits.sort_by(|a, b| {
        rank_order(
            &RankingRow { spec: a.spec, loglik: a.loglik, aic: a.aic },
            &RankingRow { spec: b.spec, loglik: b.loglik, aic: b.aic },
        )
    });
    let rows = fits
        .iter()
        .map(|f| RankingRow {
            spec: f.spec,
            loglik: f.loglik,
            aic: f.aic,
        })
        .collect();
    let best = fits.swap_remove(0);
    Ok((best, Ranking { rows, failures }))
}

/// Truncated AR(K) form of an invertible MA(1) `y_t = ε_t − θ ε_{t−1}`:
/// inverting `(1 − θL)` gives `y_t = −Σ_{k≥1} θ^k y_{t−k} + ε_t`, so the
/// coefficient on `y_{t−k}` is `−θ^k`.
pub fn ma1_to_ar(theta: f64, k: usize) -> Result<Vec<f64>> {
    if !(theta.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "MA(1) with theta = {theta} is not invertible"
        )));
    }
    Ok(powers(theta, k).skip(1).map(|p| -p).collect())
}

/// Truncated MA form of a stationary AR(1): `y_t = Σ_{k=0}^{K} ρ^k ε_{t−k}`.
pub fn ar1_to_ma(rho: f64, k: usize) -> Result<Vec<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "AR(1) with rho = {rho} is not stationary"
        )));
    }
    Ok(powers(rho, k).collect())
}

/// `x^0, x^1, …, x^k` by repeated multiplication.
fn powers(x: f64, k: usize) -> impl Iterator<Item = f64> {
    std::iter::successors(Some(1.0), move |p| Some(p * x)).take(k + 1)
}

/// Response of `y_t = Σ φ_k y_{t−k} + ε_t` to a unit impulse at t = 0.
pub fn ar_impulse_response(ar: &[f64], len: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(len);
    for t in 0..len {
        let mut v = if t == 0 { 1.0 } else { 0.0 };
        for (k, phi) in ar.iter().enumerate() {
            if t > k {
                v += phi * h[t - k - 1];
            }
        }
        h.push(v);
    }
    h
}

/// Response of `y_t = ε_t − Σ θ_j ε_{t−j}` to a unit impulse at t = 0.
pub fn ma_impulse_response(ma: &[f64], len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| match t {
            0 => 1.0,
            t if t <= ma.len() => -ma[t - 1],
            _ => 0.0,
        })
        .collect()
}
