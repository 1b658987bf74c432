//! Augmented Dickey-Fuller and Phillips-Perron unit-root tests.
//!
//! Both tests share the null of a unit root (`γ = 0` in
//! `Δy_t = μ + βt + γ y_{t−1} + …`) against the stationary alternative
//! `γ < 0`. P-values come from MacKinnon's (1994) response surfaces for the
//! single-series Dickey-Fuller distribution; finite-sample critical values
//! from MacKinnon (2010).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{ols, OlsFit};
use crate::timeseries::MonthlySeries;

/// Deterministic terms in the test regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regression {
    None,
    Drift,
    Trend,
}

impl Regression {
    fn n_deterministic(self) -> usize {
        match self {
            Regression::None => 0,
            Regression::Drift => 1,
            Regression::Trend => 2,
        }
    }
}

impl fmt::Display for Regression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regression::None => "none",
            Regression::Drift => "drift",
            Regression::Trend => "trend",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitRootTest {
    Adf,
    Pp,
}

/// Below this many effective observations results carry a warning flag.
pub const SMALL_SAMPLE_THRESHOLD: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRootResult {
    pub test: UnitRootTest,
    pub statistic: f64,
    pub p_value: f64,
    #[serde(rename = "lags")]
    pub lags_used: usize,
    pub regression: Regression,
    pub n_effective: usize,
    pub small_sample_warning: bool,
}

impl UnitRootResult {
    pub fn rejects_unit_root(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    pub fn critical_values(&self) -> CriticalValues {
        critical_values(self.regression, self.n_effective)
    }

    /// One-line statement of the decision at significance level `alpha`.
    pub fn decision(&self, alpha: f64) -> String {
        decision_text(self.p_value, alpha)
    }
}

/// Textual decision rule: reject the unit-root null when `p < alpha`.
pub fn decision_text(p_value: f64, alpha: f64) -> String {
    if p_value < alpha {
        format!(
            "p-value {p_value:.5} < alpha {alpha}: reject the unit-root null; the series is stationary"
        )
    } else {
        format!(
            "p-value {p_value:.5} >= alpha {alpha}: cannot reject the unit-root null"
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub one_pct: f64,
    pub five_pct: f64,
    pub ten_pct: f64,
}

// MacKinnon (2010), table 2, N = 1: c(T) = b0 + b1/T + b2/T^2 + b3/T^3.
const CV_NONE: [[f64; 4]; 3] = [
    [-2.56574, -2.2358, -3.627, 0.0],
    [-1.94100, -0.2686, -3.365, 31.223],
    [-1.61682, 0.2656, -2.714, 25.364],
];
const CV_DRIFT: [[f64; 4]; 3] = [
    [-3.43035, -6.5393, -16.786, -79.433],
    [-2.86154, -2.8903, -4.234, -40.040],
    [-2.56677, -1.5384, -2.809, 0.0],
];
const CV_TREND: [[f64; 4]; 3] = [
    [-3.95877, -9.0531, -28.428, -134.155],
    [-3.41049, -4.3904, -9.036, -45.374],
    [-3.12705, -2.5856, -3.925, -22.380],
];

pub fn critical_values(regression: Regression, nobs: usize) -> CriticalValues {
    let table = match regression {
        Regression::None => &CV_NONE,
        Regression::Drift => &CV_DRIFT,
        Regression::Trend => &CV_TREND,
    };
    let inv = 1.0 / nobs.max(1) as f64;
    let eval = |b: &[f64; 4]| b[0] + b[1] * inv + b[2] * inv * inv + b[3] * inv * inv * inv;
    CriticalValues {
        one_pct: eval(&table[0]),
        five_pct: eval(&table[1]),
        ten_pct: eval(&table[2]),
    }
}

struct PSurface {
    tau_min: f64,
    tau_star: f64,
    tau_max: f64,
    small: [f64; 3],
    large: [f64; 4],
}

// MacKinnon (1994), N = 1. Polynomials in the statistic, scaled coefficients
// already applied; p = Φ(poly(τ)).
const P_NONE: PSurface = PSurface {
    tau_min: -19.04,
    tau_star: -1.04,
    tau_max: f64::INFINITY,
    small: [0.6344, 1.2378, 3.2496e-2],
    large: [0.4797, 9.3557e-1, -0.6999e-1, 3.3066e-2],
};
const P_DRIFT: PSurface = PSurface {
    tau_min: -18.83,
    tau_star: -1.61,
    tau_max: 2.74,
    small: [2.1659, 1.4412, 3.8269e-2],
    large: [1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2],
};
const P_TREND: PSurface = PSurface {
    tau_min: -16.18,
    tau_star: -2.89,
    tau_max: 0.70,
    small: [3.2512, 1.6047, 4.9588e-2],
    large: [2.5261, 6.1654e-1, -3.7956e-1, -6.0285e-2],
};

/// Asymptotic p-value of a Dickey-Fuller τ statistic.
pub fn mackinnon_p_value(statistic: f64, regression: Regression) -> f64 {
    let s = match regression {
        Regression::None => &P_NONE,
        Regression::Drift => &P_DRIFT,
        Regression::Trend => &P_TREND,
    };
    if statistic.is_nan() {
        return f64::NAN;
    }
    if statistic > s.tau_max {
        return 1.0;
    }
    if statistic < s.tau_min {
        return 0.0;
    }
    let t = statistic;
    let z = if t <= s.tau_star {
        s.small[0] + t * (s.small[1] + t * s.small[2])
    } else {
        s.large[0] + t * (s.large[1] + t * (s.large[2] + t * s.large[3]))
    };
    Normal::standard().cdf(z).clamp(0.0, 1.0)
}

/// `⌊(n − 1)^{1/3}⌋`.
pub fn default_adf_lags(n: usize) -> usize {
    let n1 = n.saturating_sub(1) as f64;
    let mut k = n1.cbrt().floor() as usize;
    // cbrt of a perfect cube can land a hair below the integer.
    if ((k + 1) as f64).powi(3) <= n1 {
        k += 1;
    }
    k
}

/// `⌊4 (n/100)^{2/9}⌋`.
pub fn default_pp_lags(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// The fitted test regression
/// `Δy_t = μ + βt + γ y_{t−1} + Σ δ_i Δy_{t−i} + ε_t`.
/// Column 0 of the design is always `y_{t−1}`.
pub(crate) struct TestRegression {
    #[cfg_attr(not(test), allow(dead_code))]
    pub design: DMatrix<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub response: DVector<f64>,
    pub fit: OlsFit,
}

pub(crate) fn test_regression(
    y: &[f64],
    lags: usize,
    regression: Regression,
) -> Result<TestRegression> {
    let n = y.len();
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // Rows correspond to dy indices lags..n-1, i.e. t = lags+1..n-1 in y.
    let rows = dy.len().saturating_sub(lags);
    let k = 1 + regression.n_deterministic() + lags;
    if rows <= k {
        return Err(Error::InsufficientData {
            needed: k + lags + 2,
            got: n,
        });
    }
    let mut design = DMatrix::zeros(rows, k);
    let mut response = DVector::zeros(rows);
    for r in 0..rows {
        let j = r + lags; // index into dy; Δy_t with t = j + 1
        response[r] = dy[j];
        let mut c = 0;
        design[(r, c)] = y[j];
        c += 1;
        if regression != Regression::None {
            design[(r, c)] = 1.0;
            c += 1;
        }
        if regression == Regression::Trend {
            design[(r, c)] = (j + 1) as f64;
            c += 1;
        }
        for i in 1..=lags {
            design[(r, c)] = dy[j - i];
            c += 1;
        }
    }
    let fit = ols(&design, &response)?;
    Ok(TestRegression {
        design,
        response,
        fit,
    })
}

/// Augmented Dickey-Fuller test with a fixed lag order.
pub fn adf_test(
    series: &MonthlySeries,
    lags: usize,
    regression: Regression,
) -> Result<UnitRootResult> {
    let y = series.values();
    if y.len() < lags + 10 {
        return Err(Error::InsufficientData {
            needed: lags + 10,
            got: y.len(),
        });
    }
    let reg = test_regression(y, lags, regression)?;
    if reg.fit.sse <= 0.0 {
        return Err(Error::Singular("test regression fits exactly".into()));
    }
    let statistic = reg.fit.t_ratio(0);
    let n_effective = reg.fit.nobs;
    Ok(UnitRootResult {
        test: UnitRootTest::Adf,
        statistic,
        p_value: mackinnon_p_value(statistic, regression),
        lags_used: lags,
        regression,
        n_effective,
        small_sample_warning: n_effective < SMALL_SAMPLE_THRESHOLD,
    })
}

/// ADF with the default lag order `⌊(n − 1)^{1/3}⌋`.
pub fn adf_test_default(series: &MonthlySeries, regression: Regression) -> Result<UnitRootResult> {
    adf_test(series, default_adf_lags(series.len()), regression)
}

/// Bartlett-kernel long-run variance of `u` with truncation `lags`.
pub fn long_run_variance(u: &[f64], lags: usize) -> f64 {
    let n = u.len() as f64;
    let gamma = |j: usize| -> f64 { u[j..].iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / n };
    let mut lr = gamma(0);
    for j in 1..=lags.min(u.len().saturating_sub(1)) {
        lr += 2.0 * (1.0 - j as f64 / (lags + 1) as f64) * gamma(j);
    }
    lr
}

/// Phillips-Perron `Z_τ` test with the default truncation lag.
pub fn pp_test(series: &MonthlySeries, regression: Regression) -> Result<UnitRootResult> {
    pp_test_with_lags(series, regression, default_pp_lags(series.len()))
}

pub fn pp_test_with_lags(
    series: &MonthlySeries,
    regression: Regression,
    lags: usize,
) -> Result<UnitRootResult> {
    let y = series.values();
    if y.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: y.len(),
        });
    }
    let reg = test_regression(y, 0, regression)?;
    let fit = &reg.fit;
    let n = fit.nobs as f64;
    let u: Vec<f64> = fit.residuals.iter().copied().collect();
    let s2 = fit.s2();
    if s2 <= 0.0 || !s2.is_finite() {
        return Err(Error::DegenerateSeries("zero residual variance".into()));
    }
    let gamma0 = fit.sse / n;
    let lam2 = long_run_variance(&u, lags);
    if lam2 <= 0.0 {
        return Err(Error::DegenerateSeries("non-positive long-run variance".into()));
    }
    let lam = lam2.sqrt();
    let se = fit.std_err[0];
    let t = fit.t_ratio(0);
    let statistic = (gamma0 / lam2).sqrt() * t - 0.5 * ((lam2 - gamma0) / lam) * (n * se / s2.sqrt());
    let n_effective = fit.nobs;
    Ok(UnitRootResult {
        test: UnitRootTest::Pp,
        statistic,
        p_value: mackinnon_p_value(statistic, regression),
        lags_used: lags,
        regression,
        n_effective,
        small_sample_warning: n_effective < SMALL_SAMPLE_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::month::MonthKey;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn series(v: Vec<f64>) -> MonthlySeries {
        MonthlySeries::new(MonthKey::new(2000, 1).unwrap(), v).unwrap()
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn p_values_at_asymptotic_five_percent_points() {
        for (reg, cv) in [
            (Regression::None, -1.941),
            (Regression::Drift, -2.8615),
            (Regression::Trend, -3.4105),
        ] {
            let p = mackinnon_p_value(cv, reg);
            assert!((p - 0.05).abs() < 0.002, "{reg}: {p}");
        }
    }

    #[test]
    fn p_value_bounds() {
        assert_eq!(mackinnon_p_value(-30.0, Regression::Drift), 0.0);
        assert_eq!(mackinnon_p_value(5.0, Regression::Drift), 1.0);
        assert!(mackinnon_p_value(50.0, Regression::None) <= 1.0);
    }

    #[test]
    fn decision_rule_on_reported_p_value() {
        let text = decision_text(0.01688, 0.05);
        assert!(text.contains("reject the unit-root null"));
        assert!(0.01688 < 0.05);
        assert!(decision_text(0.2, 0.05).contains("cannot reject"));
    }

    #[test]
    fn default_lag_rules() {
        assert_eq!(default_adf_lags(14), 2);
        assert_eq!(default_adf_lags(200), 5);
        assert_eq!(default_adf_lags(28), 3);
        assert_eq!(default_pp_lags(200), 4);
        assert_eq!(default_pp_lags(100), 4);
        assert_eq!(default_pp_lags(14), 2);
    }

    #[test]
    fn pp_without_truncation_equals_ols_t_ratio() {
        let s = series(noise(3, 80).iter().scan(0.0, |a, e| { *a += e; Some(*a) }).collect());
        let pp = pp_test_with_lags(&s, Regression::None, 0).unwrap();
        let reg = test_regression(s.values(), 0, Regression::None).unwrap();
        assert!((pp.statistic - reg.fit.t_ratio(0)).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_singular() {
        assert!(adf_test(&series(vec![1.0; 40]), 2, Regression::Drift).is_err());
        assert!(pp_test(&series(vec![1.0; 40]), Regression::None).is_err());
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(
            adf_test(&series(noise(1, 11)), 2, Regression::Drift),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            pp_test(&series(noise(1, 9)), Regression::None),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn small_sample_flag() {
        let r = adf_test(&series(noise(5, 20)), 1, Regression::Drift).unwrap();
        assert!(r.small_sample_warning);
        assert_eq!(r.n_effective, 18);
        let r = adf_test(&series(noise(5, 100)), 1, Regression::Drift).unwrap();
        assert!(!r.small_sample_warning);
    }

    #[test]
    fn json_shape() {
        let r = adf_test(&series(noise(9, 60)), 2, Regression::Trend).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["test", "statistic", "p_value", "lags", "regression", "n_effective", "small_sample_warning"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["test"], "adf");
        assert_eq!(v["regression"], "trend");
    }

    #[test]
    fn trend_regression_residuals_orthogonal_to_regressors() {
        let y: Vec<f64> = noise(11, 120)
            .iter()
            .enumerate()
            .scan(0.0, |a, (i, e)| {
                *a = 0.5 * *a + e;
                Some(*a + 0.03 * i as f64)
            })
            .collect();
        let reg = test_regression(&y, 3, Regression::Trend).unwrap();
        let xtu = reg.design.transpose() * &reg.fit.residuals;
        for j in 0..reg.design.ncols() {
            let scale = reg.design.column(j).norm() * reg.response.norm();
            assert!(xtu[j].abs() <= 1e-10 * scale.max(1.0), "column {j}: {}", xtu[j]);
        }
    }

    proptest! {
        #[test]
        fn p_value_monotone_in_statistic(a in -25.0f64..6.0, b in -25.0f64..6.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for reg in [Regression::None, Regression::Drift, Regression::Trend] {
                let pl = mackinnon_p_value(lo, reg);
                let ph = mackinnon_p_value(hi, reg);
                prop_assert!(pl <= ph + 1e-12, "{reg}: p({lo})={pl} > p({hi})={ph}");
                prop_assert!((0.0..=1.0).contains(&pl));
            }
        }

        #[test]
        fn statistics_scale_free(seed in 0u64..1000, scale in 0.001f64..1000.0) {
            let v = noise(seed, 60);
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            for reg in [Regression::None, Regression::Drift, Regression::Trend] {
                let a = adf_test(&series(v.clone()), 2, reg).unwrap();
                let b = adf_test(&series(scaled.clone()), 2, reg).unwrap();
                prop_assert!((a.statistic - b.statistic).abs() < 1e-8 * (1.0 + a.statistic.abs()));
                let a = pp_test(&series(v.clone()), reg).unwrap();
                let b = pp_test(&series(scaled.clone()), reg).unwrap();
                prop_assert!((a.statistic - b.statistic).abs() < 1e-8 * (1.0 + a.statistic.abs()));
            }
        }
    }
}
