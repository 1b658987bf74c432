//! Percentile tier tables, monthly charges, invoice projections and
//! change distributions.
//!
//! Caps are closed above: a customer with exactly `cap` requests in a month
//! belongs to that tier. The last tier has no cap and is metered at the unit
//! price. Amounts are rounded half-up to the cent when a charge is produced;
//! everything before that runs at full precision.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::UsageRecord;
use crate::money::Cents;
use crate::month::MonthKey;
use crate::timeseries::quantile_sorted;

/// Percent breakpoints of the reference schedule (eight tiers).
pub const DEFAULT_BREAKPOINTS: [f64; 7] = [25.0, 35.0, 45.0, 55.0, 65.0, 78.0, 85.0];

/// At most ten tiers, so at most nine breakpoints.
pub const MAX_BREAKPOINTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "amount")]
pub enum TierPrice {
    /// Flat monthly price.
    Flat(Cents),
    /// Unit price times requests, rounded to the cent.
    Metered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    /// 1-based.
    pub index: usize,
    pub pct_low: f64,
    pub pct_high: f64,
    /// Inclusive upper bound on monthly requests; `None` for the metered tier.
    pub cap: Option<u64>,
    pub price: TierPrice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierTable {
    pub tiers: Vec<Tier>,
    /// Dollars per request.
    pub unit_price: f64,
}

impl TierTable {
    /// Builds a table from explicit caps. `breakpoints` are the percent
    /// bounds the caps stand for and must have the same length.
    pub fn from_caps(caps: &[u64], breakpoints: &[f64], unit_price: f64) -> Result<TierTable> {
        check_breakpoints(breakpoints)?;
        if caps.len() != breakpoints.len() {
            return Err(Error::InvalidArgument(format!(
                "{} caps for {} breakpoints",
                caps.len(),
                breakpoints.len()
            )));
        }
        if !(unit_price > 0.0) || !unit_price.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "unit price must be positive, got {unit_price}"
            )));
        }
        if let Some(w) = caps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "request caps must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
        let mut tiers = Vec::with_capacity(caps.len() + 1);
        let mut low = 0.0;
        for (i, (&cap, &bp)) in caps.iter().zip(breakpoints).enumerate() {
            tiers.push(Tier {
                index: i + 1,
                pct_low: low,
                pct_high: bp / 100.0,
                cap: Some(cap),
                price: TierPrice::Flat(Cents::from_dollars(cap as f64 * unit_price)),
            });
            low = bp / 100.0;
        }
        tiers.push(Tier {
            index: caps.len() + 1,
            pct_low: low,
            pct_high: 1.0,
            cap: None,
            price: TierPrice::Metered,
        });
        Ok(TierTable { tiers, unit_price })
    }

    pub fn caps(&self) -> Vec<u64> {
        self.tiers.iter().filter_map(|t| t.cap).collect()
    }

    /// Flat prices of the capped tiers, in order.
    pub fn flat_prices(&self) -> Vec<Cents> {
        self.tiers
            .iter()
            .filter_map(|t| match t.price {
                TierPrice::Flat(c) => Some(c),
                TierPrice::Metered => None,
            })
            .collect()
    }

    /// `index,pct_low,pct_high,cap,price`; the metered tier has an empty cap
    /// and `<unit price>/request` as its price.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "pct_low", "pct_high", "cap", "price"])?;
        for t in &self.tiers {
            let cap = t.cap.map(|c| c.to_string()).unwrap_or_default();
            let price = match t.price {
                TierPrice::Flat(c) => c.to_string(),
                TierPrice::Metered => format!("{:.6}/request", self.unit_price),
            };
            wtr.write_record([
                t.index.to_string(),
                format!("{:.2}", t.pct_low),
                format!("{:.2}", t.pct_high),
                cap,
                price,
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<tiers csv>", e))?;
        Ok(())
    }
}

fn check_breakpoints(breakpoints: &[f64]) -> Result<()> {
    if breakpoints.len() > MAX_BREAKPOINTS {
        return Err(Error::InvalidArgument(format!(
            "{} breakpoints give more than {} tiers",
            breakpoints.len(),
            MAX_BREAKPOINTS + 1
        )));
    }
    if breakpoints.iter().any(|b| !(*b > 0.0 && *b < 100.0)) {
        return Err(Error::InvalidArgument(
            "breakpoints must lie strictly between 0 and 100 percent".into(),
        ));
    }
    if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "breakpoints must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Tier table whose caps are the floors of the empirical percentiles of
/// pooled customer-month request counts.
pub fn build_tiers(monthly_requests: &[u64], unit_price: f64, breakpoints: &[f64]) -> Result<TierTable> {
    check_breakpoints(breakpoints)?;
    if monthly_requests.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut sorted: Vec<f64> = monthly_requests.iter().map(|&r| r as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let caps: Vec<u64> = breakpoints
        .iter()
        .map(|bp| quantile_sorted(&sorted, bp / 100.0).floor() as u64)
        .collect();
    TierTable::from_caps(&caps, breakpoints, unit_price)
}

/// Smallest tier whose cap is at least `requests`; the metered tier beyond.
pub fn assign_tier(requests: u64, table: &TierTable) -> &Tier {
    table
        .tiers
        .iter()
        .find(|t| t.cap.is_none_or(|cap| requests <= cap))
        .expect("a tier table always ends with an uncapped tier")
}

pub fn monthly_charge(requests: u64, table: &TierTable) -> Cents {
    match assign_tier(requests, table).price {
        TierPrice::Flat(c) => c,
        TierPrice::Metered => Cents::from_dollars(requests as f64 * table.unit_price),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomerCharge {
    pub customer_guid: String,
    pub requests: u64,
    pub tier: usize,
    pub charge: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub month: MonthKey,
    pub total: Cents,
    /// Sorted by guid.
    pub per_customer: Vec<CustomerCharge>,
}

impl Projection {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["guid", "requests", "tier", "charge"])?;
        for c in &self.per_customer {
            wtr.write_record([
                c.customer_guid.clone(),
                c.requests.to_string(),
                c.tier.to_string(),
                c.charge.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<projection csv>", e))?;
        Ok(())
    }
}

/// Charges every customer with a usage row in `month`.
pub fn project_invoices(usage: &[UsageRecord], table: &TierTable, month: MonthKey) -> Projection {
    let mut requests: BTreeMap<&str, u64> = BTreeMap::new();
    for u in usage.iter().filter(|u| u.month == month) {
        *requests.entry(u.customer_guid.as_str()).or_default() += u.request_count;
    }
    let per_customer: Vec<CustomerCharge> = requests
        .into_iter()
        .map(|(guid, req)| CustomerCharge {
            customer_guid: guid.to_string(),
            requests: req,
            tier: assign_tier(req, table).index,
            charge: monthly_charge(req, table),
        })
        .collect();
    Projection {
        month,
        total: per_customer.iter().map(|c| c.charge).sum(),
        per_customer,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvoiceComparison {
    pub month: MonthKey,
    pub actual: Cents,
    /// Projected dollars at full precision.
    pub projected: f64,
    /// `actual − projected`, to the cent.
    pub difference: Cents,
    /// `(projected − actual) / actual × 100`.
    pub pct_change: f64,
}

pub fn compare_invoices(actual: Cents, projected: f64, month: MonthKey) -> Result<InvoiceComparison> {
    if actual <= Cents::ZERO {
        return Err(Error::InvalidArgument(format!(
            "actual invoice for {month} must be positive, got {actual}"
        )));
    }
    if !projected.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite projection for {month}")));
    }
    let a = actual.dollars();
    Ok(InvoiceComparison {
        month,
        actual,
        projected,
        difference: Cents::from_dollars(a - projected),
        pct_change: (projected - a) / a * 100.0,
    })
}

/// Gap between an externally reported difference (rounded to the cent) and
/// the one computed from the actual and projected columns, when it exceeds
/// one cent.
pub fn check_reported_difference(cmp: &InvoiceComparison, reported: f64) -> Option<f64> {
    let gap = Cents::from_dollars(reported) - cmp.difference;
    (gap.0.abs() > 1).then_some(gap.dollars())
}

pub fn write_comparisons<W: Write>(w: W, rows: &[InvoiceComparison]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["month", "actual", "projected", "difference", "pct_change"])?;
    for r in rows {
        wtr.write_record([
            r.month.to_string(),
            r.actual.to_string(),
            format!("{:.3}", r.projected),
            r.difference.to_string(),
            format!("{:.2}", r.pct_change),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<comparison csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeMode {
    Dollars,
    Percent,
}

impl fmt::Display for ChangeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeMode::Dollars => "dollars",
            ChangeMode::Percent => "percent",
        })
    }
}

/// Half-open `[lower, upper)` except the last regular bucket, which also
/// holds its upper bound. Overflow buckets have an infinite outer bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub overflow: bool,
}

/// Regular buckets span this many units on either side of zero.
pub const CHANGE_RANGE: f64 = 100.0;

/// Buckets customers by `new − old` (dollars) or by relative change in
/// percent. Regular buckets of `bucket_width` cover `[−100, 100]`; beyond
/// that are overflow buckets. Percent changes cannot fall below −100, so
/// percent mode has no left overflow. A customer with an old charge of zero
/// and a positive new one counts as right overflow in percent mode.
pub fn change_distribution(
    old_charges: &[Cents],
    new_charges: &[Cents],
    mode: ChangeMode,
    bucket_width: f64,
) -> Result<Vec<ChangeBucket>> {
    if old_charges.len() != new_charges.len() {
        return Err(Error::InvalidArgument(format!(
            "{} old charges but {} new charges",
            old_charges.len(),
            new_charges.len()
        )));
    }
    if !(bucket_width > 0.0) || !bucket_width.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bucket width must be positive, got {bucket_width}"
        )));
    }
    let n_regular = ((2.0 * CHANGE_RANGE / bucket_width) - 1e-9).ceil().max(1.0) as usize;
    let mut buckets = Vec::with_capacity(n_regular + 2);
    if mode == ChangeMode::Dollars {
        buckets.push(ChangeBucket {
            lower: f64::NEG_INFINITY,
            upper: -CHANGE_RANGE,
            count: 0,
            overflow: true,
        });
    }
    let first_regular = buckets.len();
    for i in 0..n_regular {
        buckets.push(ChangeBucket {
            lower: -CHANGE_RANGE + i as f64 * bucket_width,
            upper: (-CHANGE_RANGE + (i + 1) as f64 * bucket_width).min(CHANGE_RANGE),
            count: 0,
            overflow: false,
        });
    }
    buckets.push(ChangeBucket {
        lower: CHANGE_RANGE,
        upper: f64::INFINITY,
        count: 0,
        overflow: true,
    });
    let right = buckets.len() - 1;

    for (old, new) in old_charges.iter().zip(new_charges) {
        let delta = match mode {
            ChangeMode::Dollars => (*new - *old).dollars(),
            ChangeMode::Percent => {
                if old.0 == 0 {
                    if new.0 == 0 {
                        0.0
                    } else if new.0 > 0 {
                        f64::INFINITY
                    } else {
                        -CHANGE_RANGE
                    }
                } else {
                    // Integer cents keep the ratio exact where it can be.
                    (new.0 - old.0) as f64 / old.0.abs() as f64 * 100.0
                }
            }
        };
        let slot = if delta > CHANGE_RANGE {
            right
        } else if delta < -CHANGE_RANGE {
            // Only reachable in dollars mode; clamp defensively otherwise.
            if mode == ChangeMode::Dollars {
                0
            } else {
                first_regular
            }
        } else {
            let i = ((delta + CHANGE_RANGE) / bucket_width).floor() as usize;
            first_regular + i.min(n_regular - 1)
        };
        buckets[slot].count += 1;
    }
    Ok(buckets)
}

pub fn write_histogram<W: Write>(w: W, buckets: &[ChangeBucket]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["lower", "upper", "count", "overflow"])?;
    for b in buckets {
        wtr.write_record([
            format_bound(b.lower),
            format_bound(b.upper),
            b.count.to_string(),
            b.overflow.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<histogram csv>", e))?;
    Ok(())
}

fn format_bound(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}
