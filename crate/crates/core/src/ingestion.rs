//! Warehouse-export ingestion: CSV parsing, active-license counting, monthly
//! aggregation and the price-per-request series.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::money::Cents;
use crate::month::MonthKey;
use crate::timeseries::MonthlySeries;

pub const SALES_FACTS_FILE: &str = "sales_facts.csv";
pub const ORG_STATS_FILE: &str = "org_stats.csv";
pub const CUSTOMERS_FILE: &str = "customers.csv";
pub const ACTUAL_INVOICES_FILE: &str = "actual_invoices.csv";

const SALES_FACTS_COLUMNS: [&str; 6] = [
    "customer_guid",
    "end_users",
    "effective_date",
    "expiration_date",
    "invoiced_amount",
    "channel",
];
const ORG_STATS_COLUMNS: [&str; 3] = ["customer_guid", "month", "request_count"];
const CUSTOMERS_COLUMNS: [&str; 2] = ["guid", "name"];
const ACTUAL_INVOICES_COLUMNS: [&str; 2] = ["month", "total_invoiced"];

/// Longest license term accepted, in months.
pub const MAX_TERM_MONTHS: i64 = 12;

/// One `channel_sales_fact` row. Active for `effective <= m < expiration`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LicenseRecord {
    pub customer_guid: String,
    pub end_users: u64,
    pub effective: MonthKey,
    pub expiration: MonthKey,
    pub invoiced_amount: Cents,
    pub channel: String,
}

impl LicenseRecord {
    pub fn term_months(&self) -> i64 {
        self.expiration.months_since(self.effective)
    }

    pub fn is_active(&self, month: MonthKey) -> bool {
        self.effective <= month && month < self.expiration
    }

    /// Invoiced amount spread uniformly over the active months of the term.
    pub fn monthly_invoice(&self) -> f64 {
        match self.term_months() {
            0 => 0.0,
            t => self.invoiced_amount.dollars() / t as f64,
        }
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let term = self.term_months();
        if term < 0 {
            return Err(("expiration_date", "expiration precedes effective date".into()));
        }
        if term > MAX_TERM_MONTHS {
            return Err((
                "expiration_date",
                format!("license term of {term} months exceeds {MAX_TERM_MONTHS}"),
            ));
        }
        if self.invoiced_amount < Cents::ZERO {
            return Err(("invoiced_amount", "negative amount".into()));
        }
        Ok(())
    }
}

/// One `org_stats` row: portal requests of a customer in a month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub customer_guid: String,
    pub month: MonthKey,
    pub request_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomerInfo {
    pub guid: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActualInvoice {
    pub month: MonthKey,
    pub total_invoiced: Cents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyAggregate {
    pub month: MonthKey,
    pub active_licenses: u64,
    /// Prorated dollars at full precision.
    pub invoiced_total: f64,
    pub request_total: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tables {
    pub licenses: Vec<LicenseRecord>,
    pub usage: Vec<UsageRecord>,
    pub customers: Vec<CustomerInfo>,
}

#[derive(Debug, Clone)]
pub struct TablePaths {
    pub sales_facts: PathBuf,
    pub org_stats: PathBuf,
    pub customers: PathBuf,
}

impl TablePaths {
    /// The conventional file names inside a data directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            sales_facts: dir.join(SALES_FACTS_FILE),
            org_stats: dir.join(ORG_STATS_FILE),
            customers: dir.join(CUSTOMERS_FILE),
        }
    }
}

struct Row<'a> {
    file: &'a str,
    line: u64,
    record: &'a csv::StringRecord,
    index: &'a HashMap<&'static str, usize>,
}

impl Row<'_> {
    fn error(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_string(),
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn raw(&self, field: &'static str) -> Result<&str> {
        self.record
            .get(self.index[field])
            .ok_or_else(|| self.error(field, "missing value"))
    }

    fn text(&self, field: &'static str) -> Result<String> {
        Ok(self.raw(field)?.to_string())
    }

    fn id(&self, field: &'static str) -> Result<String> {
        let v = self.raw(field)?.trim();
        if v.is_empty() {
            return Err(self.error(field, "empty identifier"));
        }
        Ok(v.to_string())
    }

    fn count(&self, field: &'static str) -> Result<u64> {
        let v = self.raw(field)?.trim();
        v.parse::<u64>().map_err(|_| {
            if v.starts_with('-') {
                self.error(field, format!("negative count `{v}`"))
            } else {
                self.error(field, format!("invalid count `{v}`"))
            }
        })
    }

    fn parse<T: FromStr<Err = Error>>(&self, field: &'static str) -> Result<T> {
        self.raw(field)?
            .parse()
            .map_err(|e: Error| self.error(field, e.to_string()))
    }
}

fn read_table<R: Read, T>(
    reader: R,
    file: &str,
    columns: &[&'static str],
    mut row_fn: impl FnMut(&Row<'_>) -> Result<T>,
) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        match columns.iter().find(|c| **c == h) {
            Some(c) => {
                if index.insert(*c, i).is_some() {
                    return Err(Error::Header {
                        file: file.to_string(),
                        message: format!("duplicate column `{h}`"),
                    });
                }
            }
            None => {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line: 1,
                    field: h.to_string(),
                    message: "unknown column".into(),
                })
            }
        }
    }
    if let Some(missing) = columns.iter().find(|c| !index.contains_key(*c)) {
        return Err(Error::Header {
            file: file.to_string(),
            message: format!("missing column `{missing}`"),
        });
    }

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line,
                    field: String::new(),
                    message: e.to_string(),
                })
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        let row = Row {
            file,
            line,
            record: &record,
            index: &index,
        };
        out.push(row_fn(&row)?);
    }
    Ok(out)
}

pub fn read_licenses<R: Read>(reader: R, file: &str) -> Result<Vec<LicenseRecord>> {
    read_table(reader, file, &SALES_FACTS_COLUMNS, |row| {
        let rec = LicenseRecord {
            customer_guid: row.id("customer_guid")?,
            end_users: row.count("end_users")?,
            effective: row.parse("effective_date")?,
            expiration: row.parse("expiration_date")?,
            invoiced_amount: row.parse("invoiced_amount")?,
            channel: row.text("channel")?,
        };
        rec.validate().map_err(|(f, m)| row.error(f, m))?;
        Ok(rec)
    })
}

/// Parses usage rows, merging duplicate `(customer, month)` rows by summing
/// their counts. Output is sorted by customer then month.
pub fn read_usage<R: Read>(reader: R, file: &str) -> Result<Vec<UsageRecord>> {
    let rows = read_table(reader, file, &ORG_STATS_COLUMNS, |row| {
        Ok(UsageRecord {
            customer_guid: row.id("customer_guid")?,
            month: row.parse("month")?,
            request_count: row.count("request_count")?,
        })
    })?;
    Ok(merge_usage(rows))
}

pub fn merge_usage(rows: Vec<UsageRecord>) -> Vec<UsageRecord> {
    let mut merged: BTreeMap<(String, MonthKey), u64> = BTreeMap::new();
    for r in rows {
        *merged.entry((r.customer_guid, r.month)).or_default() += r.request_count;
    }
    merged
        .into_iter()
        .map(|((customer_guid, month), request_count)| UsageRecord {
            customer_guid,
            month,
            request_count,
        })
        .collect()
}

pub fn read_customers<R: Read>(reader: R, file: &str) -> Result<Vec<CustomerInfo>> {
    let mut seen = HashSet::new();
    read_table(reader, file, &CUSTOMERS_COLUMNS, |row| {
        let guid = row.id("guid")?;
        if !seen.insert(guid.clone()) {
            return Err(row.error("guid", format!("duplicate guid `{guid}`")));
        }
        Ok(CustomerInfo {
            guid,
            name: row.text("name")?,
        })
    })
}

pub fn read_actual_invoices<R: Read>(reader: R, file: &str) -> Result<Vec<ActualInvoice>> {
    let mut rows = read_table(reader, file, &ACTUAL_INVOICES_COLUMNS, |row| {
        let inv = ActualInvoice {
            month: row.parse("month")?,
            total_invoiced: row.parse("total_invoiced")?,
        };
        if inv.total_invoiced < Cents::ZERO {
            return Err(row.error("total_invoiced", "negative amount"));
        }
        Ok(inv)
    })?;
    rows.sort_by_key(|r| r.month);
    Ok(rows)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn display_name(path: &Path) -> String {
    path.display().to_string()
}

/// Parses the three warehouse tables.
pub fn parse_tables(paths: &TablePaths) -> Result<Tables> {
    Ok(Tables {
        licenses: read_licenses(open(&paths.sales_facts)?, &display_name(&paths.sales_facts))?,
        usage: read_usage(open(&paths.org_stats)?, &display_name(&paths.org_stats))?,
        customers: read_customers(open(&paths.customers)?, &display_name(&paths.customers))?,
    })
}

pub fn load_actual_invoices(path: &Path) -> Result<Vec<ActualInvoice>> {
    read_actual_invoices(open(path)?, &display_name(path))
}

fn finish<W: Write>(mut wtr: csv::Writer<W>) -> Result<()> {
    wtr.flush().map_err(|e| Error::io("<csv output>", e))
}

pub fn write_licenses<W: Write>(w: W, records: &[LicenseRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SALES_FACTS_COLUMNS)?;
    for r in records {
        wtr.write_record([
            r.customer_guid.clone(),
            r.end_users.to_string(),
            r.effective.to_string(),
            r.expiration.to_string(),
            r.invoiced_amount.to_string(),
            r.channel.clone(),
        ])?;
    }
    finish(wtr)
}

pub fn write_usage<W: Write>(w: W, records: &[UsageRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ORG_STATS_COLUMNS)?;
    for r in records {
        wtr.write_record([
            r.customer_guid.clone(),
            r.month.to_string(),
            r.request_count.to_string(),
        ])?;
    }
    finish(wtr)
}

pub fn write_customers<W: Write>(w: W, records: &[CustomerInfo]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CUSTOMERS_COLUMNS)?;
    for r in records {
        wtr.write_record([&r.guid, &r.name])?;
    }
    finish(wtr)
}

pub fn write_actual_invoices<W: Write>(w: W, records: &[ActualInvoice]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ACTUAL_INVOICES_COLUMNS)?;
    for r in records {
        wtr.write_record([r.month.to_string(), r.total_invoiced.to_string()])?;
    }
    finish(wtr)
}

/// Total end users over licenses active in `month`.
pub fn active_licenses(records: &[LicenseRecord], month: MonthKey) -> u64 {
    records
        .iter()
        .filter(|r| r.is_active(month))
        .map(|r| r.end_users)
        .sum()
}

/// Licenses whose term starts in `month`.
pub fn new_licenses(records: &[LicenseRecord], month: MonthKey) -> u64 {
    records
        .iter()
        .filter(|r| r.effective == month && r.term_months() > 0)
        .map(|r| r.end_users)
        .sum()
}

/// Licenses whose term ends at the start of `month`.
pub fn expiring_licenses(records: &[LicenseRecord], month: MonthKey) -> u64 {
    records
        .iter()
        .filter(|r| r.expiration == month && r.term_months() > 0)
        .map(|r| r.end_users)
        .sum()
}

fn sorted_licenses(records: &[LicenseRecord]) -> Vec<&LicenseRecord> {
    let mut v: Vec<_> = records.iter().collect();
    v.sort_by(|a, b| {
        (&a.customer_guid, a.effective, a.expiration, a.invoiced_amount, a.end_users, &a.channel).cmp(&(
            &b.customer_guid,
            b.effective,
            b.expiration,
            b.invoiced_amount,
            b.end_users,
            &b.channel,
        ))
    });
    v
}

/// One aggregate per month of the inclusive window. Sums run in a fixed
/// order (customer, then month) so totals are reproducible bit for bit.
pub fn monthly_aggregates(
    licenses: &[LicenseRecord],
    usage: &[UsageRecord],
    window: (MonthKey, MonthKey),
) -> Result<Vec<MonthlyAggregate>> {
    let (start, end) = window;
    if end < start {
        return Err(Error::InvalidArgument(format!("empty window {start}..{end}")));
    }
    let sorted = sorted_licenses(licenses);
    let mut requests: BTreeMap<MonthKey, u64> = BTreeMap::new();
    let mut usage_sorted: Vec<&UsageRecord> = usage.iter().collect();
    usage_sorted.sort_by(|a, b| (&a.customer_guid, a.month).cmp(&(&b.customer_guid, b.month)));
    for u in usage_sorted {
        *requests.entry(u.month).or_default() += u.request_count;
    }
    Ok(MonthKey::range_inclusive(start, end)
        .map(|month| {
            let mut active = 0;
            let mut invoiced = 0.0;
            for r in sorted.iter().filter(|r| r.is_active(month)) {
                active += r.end_users;
                invoiced += r.monthly_invoice();
            }
            MonthlyAggregate {
                month,
                active_licenses: active,
                invoiced_total: invoiced,
                request_total: requests.get(&month).copied().unwrap_or(0),
            }
        })
        .collect())
}

/// Dollars per request for each aggregate month.
pub fn price_per_request_series(aggregates: &[MonthlyAggregate]) -> Result<MonthlySeries> {
    let pairs = aggregates
        .iter()
        .map(|a| {
            if a.request_total == 0 {
                Err(Error::DegenerateMonth(a.month))
            } else {
                Ok((a.month, a.invoiced_total / a.request_total as f64))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    MonthlySeries::from_pairs(&pairs)
}

pub fn write_aggregates<W: Write>(w: W, aggregates: &[MonthlyAggregate]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["month", "active_licenses", "invoiced_total", "request_total"])?;
    for a in aggregates {
        wtr.write_record([
            a.month.to_string(),
            a.active_licenses.to_string(),
            Cents::from_dollars(a.invoiced_total).to_string(),
            a.request_total.to_string(),
        ])?;
    }
    finish(wtr)
}

/// Writes the series at full (round-trip) precision; it is an intermediate
/// input to the analysis step.
pub fn write_price_series<W: Write>(w: W, series: &MonthlySeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["month", "price_per_request"])?;
    for (m, v) in series.iter() {
        wtr.write_record([m.to_string(), format!("{v:e}")])?;
    }
    finish(wtr)
}

pub fn read_price_series<R: Read>(reader: R, file: &str) -> Result<MonthlySeries> {
    let pairs = read_table(reader, file, &["month", "price_per_request"], |row| {
        let month: MonthKey = row.parse("month")?;
        let raw = row.raw("price_per_request")?;
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| row.error("price_per_request", format!("invalid number `{raw}`")))?;
        Ok((month, v))
    })?;
    MonthlySeries::from_pairs(&pairs)
}

/// Per-customer state for one month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerMonth {
    pub customer_guid: String,
    pub licenses: u64,
    pub requests: u64,
    /// Current license-based invoice for the month (prorated dollars).
    pub license_charge: f64,
}

/// Every customer with an active license or nonzero usage in `month`,
/// sorted by guid.
pub fn customer_months(
    licenses: &[LicenseRecord],
    usage: &[UsageRecord],
    month: MonthKey,
) -> Vec<CustomerMonth> {
    let mut by_customer: BTreeMap<&str, CustomerMonth> = BTreeMap::new();
    for r in sorted_licenses(licenses).into_iter().filter(|r| r.is_active(month)) {
        let cm = by_customer
            .entry(r.customer_guid.as_str())
            .or_insert_with(|| CustomerMonth {
                customer_guid: r.customer_guid.clone(),
                licenses: 0,
                requests: 0,
                license_charge: 0.0,
            });
        cm.licenses += r.end_users;
        cm.license_charge += r.monthly_invoice();
    }
    for u in usage.iter().filter(|u| u.month == month && u.request_count > 0) {
        let cm = by_customer
            .entry(u.customer_guid.as_str())
            .or_insert_with(|| CustomerMonth {
                customer_guid: u.customer_guid.clone(),
                licenses: 0,
                requests: 0,
                license_charge: 0.0,
            });
        cm.requests += u.request_count;
    }
    by_customer.into_values().collect()
}
