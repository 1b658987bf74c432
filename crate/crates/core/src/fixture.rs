//! Seeded synthetic data in the ingestion CSV layout.
//!
//! Clean customers renew 12-month licenses and send requests proportional to
//! their license count, scaled by a per-customer intensity, a mild seasonal
//! cycle and bounded month-to-month noise. About one in six clean customers
//! signs up partway through the period. The bounds keep every clean
//! customer well inside six times the typical usage of its license group.
//! Planted under-reporters send 15 to 40 times their licensed volume; the
//! first planted customer holds no license at all.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{
    monthly_aggregates, write_actual_invoices, write_customers, write_licenses, write_usage,
    ActualInvoice, CustomerInfo, LicenseRecord, UsageRecord, ACTUAL_INVOICES_FILE,
    CUSTOMERS_FILE, ORG_STATS_FILE, SALES_FACTS_FILE,
};
use crate::money::Cents;
use crate::month::MonthKey;

pub const PLANTED_FILE: &str = "planted.csv";

/// Requests per licensed user in an average month.
const BASE_REQUESTS: f64 = 600.0;
/// Annual list price per licensed user, in cents.
const ANNUAL_PRICE_PER_USER: i64 = 5880;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub seed: u64,
    pub customers: usize,
    pub months: usize,
    pub start: MonthKey,
    pub under_reporters: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            seed: 42,
            customers: 200,
            months: 18,
            start: MonthKey::new(2015, 11).expect("valid month"),
            under_reporters: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedKind {
    ZeroLicense,
    UnderReporter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planted {
    pub guid: String,
    pub kind: PlantedKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub licenses: Vec<LicenseRecord>,
    pub usage: Vec<UsageRecord>,
    pub customers: Vec<CustomerInfo>,
    pub actual_invoices: Vec<ActualInvoice>,
    pub planted: Vec<Planted>,
}

fn license_count(rng: &mut ChaCha8Rng) -> u64 {
    let u: f64 = rng.random();
    if u < 0.35 {
        1
    } else if u < 0.55 {
        2
    } else if u < 0.75 {
        rng.random_range(3..=5)
    } else if u < 0.93 {
        rng.random_range(6..=15)
    } else {
        rng.random_range(16..=60)
    }
}

fn season(month: MonthKey) -> f64 {
    1.0 + 0.08 * (2.0 * PI * f64::from(month.month()) / 12.0).sin()
}

pub fn generate(cfg: &FixtureConfig) -> Result<Fixture> {
    if cfg.customers == 0 || cfg.months == 0 {
        return Err(Error::InvalidArgument(
            "fixture needs at least one customer and one month".into(),
        ));
    }
    if cfg.under_reporters > cfg.customers {
        return Err(Error::InvalidArgument(format!(
            "{} under-reporters among {} customers",
            cfg.under_reporters, cfg.customers
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let end = cfg.start.add_months(cfg.months as i64 - 1);

    let mut licenses = Vec::new();
    let mut usage = Vec::new();
    let mut customers = Vec::with_capacity(cfg.customers);
    let mut planted = Vec::new();
    let mut seen = std::collections::HashSet::new();

    for i in 0..cfg.customers {
        let guid = loop {
            let g = format!("{:016x}", rng.random::<u64>());
            if seen.insert(g.clone()) {
                break g;
            }
        };
        customers.push(CustomerInfo {
            guid: guid.clone(),
            name: format!("Practice {:04}", i + 1),
        });

        let kind = if i < cfg.under_reporters {
            Some(if i == 0 {
                PlantedKind::ZeroLicense
            } else {
                PlantedKind::UnderReporter
            })
        } else {
            None
        };
        let users = match kind {
            Some(PlantedKind::ZeroLicense) => 0,
            Some(PlantedKind::UnderReporter) => rng.random_range(1..=2),
            None => license_count(&mut rng),
        };

        let joined = if kind.is_none() && cfg.months > 1 && rng.random_bool(1.0 / 6.0) {
            cfg.start.add_months(rng.random_range(1..cfg.months as i64))
        } else {
            cfg.start
        };
        if users > 0 {
            let mut effective = if joined > cfg.start {
                joined
            } else {
                cfg.start.add_months(-rng.random_range(0..12))
            };
            let channel = if rng.random_bool(0.7) { "direct" } else { "reseller" };
            while effective <= end {
                licenses.push(LicenseRecord {
                    customer_guid: guid.clone(),
                    end_users: users,
                    effective,
                    expiration: effective.add_months(12),
                    invoiced_amount: Cents(ANNUAL_PRICE_PER_USER * users as i64),
                    channel: channel.into(),
                });
                effective = effective.add_months(12);
            }
        }

        let intensity = match kind {
            Some(_) => rng.random_range(15.0..40.0),
            None => rng.random_range(0.6..1.6),
        };
        let volume_users = users.max(1) as f64;
        for month in MonthKey::range_inclusive(joined, end) {
            let noise: f64 = rng.random_range(0.85..1.15);
            let n = (volume_users * BASE_REQUESTS * intensity * season(month) * noise).round() as u64;
            usage.push(UsageRecord {
                customer_guid: guid.clone(),
                month,
                request_count: n,
            });
        }
        if let Some(kind) = kind {
            planted.push(Planted { guid, kind });
        }
    }

    licenses.sort_by(|a, b| (&a.customer_guid, a.effective).cmp(&(&b.customer_guid, b.effective)));
    usage.sort_by(|a, b| (&a.customer_guid, a.month).cmp(&(&b.customer_guid, b.month)));
    customers.sort_by(|a, b| a.guid.cmp(&b.guid));
    planted.sort_by(|a, b| a.guid.cmp(&b.guid));

    let actual_invoices = monthly_aggregates(&licenses, &usage, (cfg.start, end))?
        .into_iter()
        .map(|a| ActualInvoice {
            month: a.month,
            total_invoiced: Cents::from_dollars(a.invoiced_total),
        })
        .collect();

    Ok(Fixture {
        licenses,
        usage,
        customers,
        actual_invoices,
        planted,
    })
}

pub fn write_planted<W: Write>(w: W, planted: &[Planted]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["guid", "kind"])?;
    for p in planted {
        let kind = match p.kind {
            PlantedKind::ZeroLicense => "zero_license",
            PlantedKind::UnderReporter => "under_reporter",
        };
        wtr.write_record([p.guid.as_str(), kind])?;
    }
    wtr.flush().map_err(|e| Error::io(PLANTED_FILE, e))?;
    Ok(())
}

/// Writes the four input tables and `planted.csv` into `dir`.
pub fn write_fixture(dir: &Path, fixture: &Fixture) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map_err(|e| Error::io(&p, e))
    };
    write_licenses(open(SALES_FACTS_FILE)?, &fixture.licenses)?;
    write_usage(open(ORG_STATS_FILE)?, &fixture.usage)?;
    write_customers(open(CUSTOMERS_FILE)?, &fixture.customers)?;
    write_actual_invoices(open(ACTUAL_INVOICES_FILE)?, &fixture.actual_invoices)?;
    write_planted(open(PLANTED_FILE)?, &fixture.planted)?;
    Ok(())
}
