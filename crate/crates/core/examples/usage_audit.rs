//! Monthly under-reporting audit over three consecutive months of a
//! synthetic dataset, with repeat-offender streaks read back from disk.
//!
//! `cargo run --example usage_audit`

use usage_pricing::audit::{load_history, monthly_audit_report, typical_usage, write_report};
use usage_pricing::fixture::{generate, FixtureConfig};
use usage_pricing::ingestion::customer_months;
use usage_pricing::pricing::{build_tiers, DEFAULT_BREAKPOINTS};
use usage_pricing::MonthKey;

fn main() -> usage_pricing::Result<()> {
    let f = generate(&FixtureConfig {
        under_reporters: 4,
        ..FixtureConfig::default()
    })?;
    let pooled: Vec<u64> = f.usage.iter().map(|u| u.request_count).collect();
    let table = build_tiers(&pooled, 0.008168, &DEFAULT_BREAKPOINTS)?;

    let month = MonthKey::new(2016, 12)?;
    let population: Vec<(u64, u64)> = customer_months(&f.licenses, &f.usage, month)
        .iter()
        .map(|c| (c.licenses, c.requests))
        .collect();
    for l in [1, 2, 5, 30] {
        println!("typical usage with {l} license(s): {:.0}", typical_usage(&population, l)?);
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let mut last = None;
    for m in [MonthKey::new(2016, 10)?, MonthKey::new(2016, 11)?, month] {
        let history = load_history(dir.path(), m)?;
        let report = monthly_audit_report(m, &f.licenses, &f.usage, &table, 6.0, &history)?;
        write_report(dir.path(), &report)?;
        last = Some(report);
    }
    println!("\n{}", last.expect("three reports").render_text());
    println!("planted: {:?}", f.planted.iter().map(|p| &p.guid).collect::<Vec<_>>());
    Ok(())
}
