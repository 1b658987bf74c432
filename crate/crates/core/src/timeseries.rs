//! Monthly series container, differencing and sample autocorrelation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::month::MonthKey;

/// Gap-free monthly observations: `values[i]` belongs to `start + i` months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    start: MonthKey,
    values: Vec<f64>,
}

impl MonthlySeries {
    pub fn new(start: MonthKey, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at {}",
                start.add_months(i as i64)
            )));
        }
        Ok(Self { start, values })
    }

    /// Builds a series from `(month, value)` pairs, rejecting gaps and
    /// out-of-order months.
    pub fn from_pairs(pairs: &[(MonthKey, f64)]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or(Error::InsufficientData { needed: 1, got: 0 })?
            .0;
        for (i, (m, _)) in pairs.iter().enumerate() {
            if *m != first.add_months(i as i64) {
                return Err(Error::InvalidArgument(format!(
                    "series has a gap or is out of order at {m}"
                )));
            }
        }
        Self::new(first, pairs.iter().map(|p| p.1).collect())
    }

    pub fn start(&self) -> MonthKey {
        self.start
    }

    pub fn end(&self) -> MonthKey {
        self.start.add_months(self.values.len() as i64 - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn months(&self) -> impl Iterator<Item = MonthKey> + '_ {
        (0..self.values.len()).map(|i| self.start.add_months(i as i64))
    }

    pub fn iter(&self) -> impl Iterator<Item = (MonthKey, f64)> + '_ {
        self.months().zip(self.values.iter().copied())
    }

    pub fn get(&self, month: MonthKey) -> Option<f64> {
        let i = month.months_since(self.start);
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn median(&self) -> f64 {
        median(&self.values)
    }

    /// Inverse of one round of differencing given the value preceding the
    /// first difference.
    pub fn cumulative_sum(&self, initial: f64) -> MonthlySeries {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        out.push(initial);
        let mut acc = initial;
        for v in &self.values {
            acc += v;
            out.push(acc);
        }
        MonthlySeries {
            start: self.start.pred(),
            values: out,
        }
    }
}

/// Applies `order` rounds of first differencing; `Δy_t = y_t − y_{t−1}`
/// is labelled with month `t`.
pub fn difference(series: &MonthlySeries, order: usize) -> Result<MonthlySeries> {
    if series.len() <= order {
        return Err(Error::InsufficientData {
            needed: order + 1,
            got: series.len(),
        });
    }
    let mut values = series.values.clone();
    for _ in 0..order {
        values = values.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(MonthlySeries {
        start: series.start.add_months(order as i64),
        values,
    })
}

/// Linear-interpolation quantile of sorted data (`h = (n − 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample median; for even length, the midpoint of the two central order
/// statistics. Returns NaN on empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    /// `coefficients[k]` is the autocorrelation at lag `k`; lag 0 is 1.
    pub coefficients: Vec<f64>,
}

impl AcfResult {
    pub fn max_lag(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn at(&self, lag: usize) -> Option<f64> {
        self.coefficients.get(lag).copied()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["lag", "coefficient"])?;
        for (lag, c) in self.coefficients.iter().enumerate() {
            wtr.write_record([lag.to_string(), format!("{c:.6}")])?;
        }
        wtr.flush().map_err(|e| Error::io("<acf csv>", e))?;
        Ok(())
    }
}

/// `min(n − 2, 10·log10(n))`, floored, and at least 1.
pub fn default_max_lag(n: usize) -> usize {
    let by_log = (10.0 * (n as f64).log10()).floor() as usize;
    by_log.min(n.saturating_sub(2)).max(1)
}

/// Stationary sample autocorrelation with the biased (divide-by-n) estimator:
/// `r_k = Σ_{t<n−k} (y_t − ȳ)(y_{t+k} − ȳ) / Σ_t (y_t − ȳ)²`.
pub fn acf(series: &MonthlySeries, max_lag: usize) -> Result<AcfResult> {
    let n = series.len();
    if max_lag == 0 {
        return Err(Error::InvalidArgument("max_lag must be positive".into()));
    }
    if n < max_lag + 2 {
        return Err(Error::InsufficientData {
            needed: max_lag + 2,
            got: n,
        });
    }
    let mean = series.mean();
    let dev: Vec<f64> = series.values.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    let scale = series.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if denom <= (f64::EPSILON * scale).powi(2) * n as f64 {
        return Err(Error::DegenerateSeries(
            "zero sample variance; autocorrelation undefined".into(),
        ));
    }
    let coefficients = (0..=max_lag)
        .map(|k| {
            let num: f64 = dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum();
            (num / denom).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AcfResult { coefficients })
}
