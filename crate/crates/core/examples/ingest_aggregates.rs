//! Generate a synthetic dataset, parse it back and build the monthly
//! price-per-request series.
//!
//! `cargo run --example ingest_aggregates`

use usage_pricing::fixture::{generate, write_fixture, FixtureConfig};
use usage_pricing::ingestion::{
    active_licenses, expiring_licenses, monthly_aggregates, new_licenses, parse_tables,
    price_per_request_series, TablePaths,
};
use usage_pricing::MonthKey;

fn main() -> usage_pricing::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let fixture = generate(&FixtureConfig::default())?;
    write_fixture(dir.path(), &fixture)?;

    let tables = parse_tables(&TablePaths::in_dir(dir.path()))?;
    println!(
        "{} license rows, {} usage rows, {} customers",
        tables.licenses.len(),
        tables.usage.len(),
        tables.customers.len()
    );

    let window = (MonthKey::new(2015, 11)?, MonthKey::new(2016, 12)?);
    let aggregates = monthly_aggregates(&tables.licenses, &tables.usage, window)?;
    println!("\nmonth    active   new  expiring  invoiced    requests");
    for a in &aggregates {
        println!(
            "{}  {:>6} {:>5} {:>9} {:>9.2} {:>11}",
            a.month,
            a.active_licenses,
            new_licenses(&tables.licenses, a.month),
            expiring_licenses(&tables.licenses, a.month),
            a.invoiced_total,
            a.request_total
        );
        // active(m) − active(m−1) = new(m) − expiring(m)
        let delta = a.active_licenses as i64 - active_licenses(&tables.licenses, a.month.pred()) as i64;
        assert_eq!(
            delta,
            new_licenses(&tables.licenses, a.month) as i64 - expiring_licenses(&tables.licenses, a.month) as i64
        );
    }

    let series = price_per_request_series(&aggregates)?;
    println!("\nprice per request:");
    for (m, p) in series.iter() {
        println!("  {m}  {p:.6}");
    }
    Ok(())
}
