//! Eight-tier pricing: table construction, tier assignment, monthly charges,
//! invoice comparison and the change histogram.
//!
//! `cargo run --example tier_pricing`

use usage_pricing::pricing::{
    assign_tier, build_tiers, change_distribution, check_reported_difference, compare_invoices,
    monthly_charge, ChangeMode, TierPrice, TierTable, DEFAULT_BREAKPOINTS,
};
use usage_pricing::Cents;

fn main() -> usage_pricing::Result<()> {
    let unit_price = 0.008168;
    let table = TierTable::from_caps(&[535, 855, 1280, 1870, 2765, 4620, 6975], &DEFAULT_BREAKPOINTS, unit_price)?;
    println!("tier  percentile   cap    price");
    for t in &table.tiers {
        let cap = t.cap.map_or("-".to_string(), |c| c.to_string());
        let price = match t.price {
            TierPrice::Flat(c) => format!("${c}"),
            TierPrice::Metered => format!("{unit_price} x requests"),
        };
        println!("{:>4}  {:>3.0}%-{:>3.0}%  {cap:>5}  {price}", t.index, t.pct_low * 100.0, t.pct_high * 100.0);
    }

    for requests in [0, 535, 536, 6975, 6976, 45105] {
        println!(
            "{requests:>6} requests -> tier {} charge ${}",
            assign_tier(requests, &table).index,
            monthly_charge(requests, &table)
        );
    }

    // Percentile caps from a pooled usage sample.
    let pooled: Vec<u64> = (0..2000u64).map(|i| (i * i) % 9973 + 50).collect();
    let built = build_tiers(&pooled, unit_price, &DEFAULT_BREAKPOINTS)?;
    println!("\ncaps from pooled sample: {:?}", built.caps());

    let cmp = compare_invoices("252473.10".parse()?, 239738.073, "2017-01".parse()?)?;
    println!(
        "\n{}: actual {} projected {:.3} difference {} change {:.2}%",
        cmp.month, cmp.actual, cmp.projected, cmp.difference, cmp.pct_change
    );
    if let Some(gap) = check_reported_difference(&cmp, 12735.010) {
        println!("reported difference 12735.010 is off by {gap:+.2}");
    }

    let old: Vec<Cents> = ["162.60", "5.42", "40.00", "12.00"].iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let new: Vec<Cents> = ["1638.40", "368.42", "37.74", "4.37"].iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    println!("\ndollar change histogram (width 50):");
    for b in change_distribution(&old, &new, ChangeMode::Dollars, 50.0)? {
        println!("  [{:>6}, {:>6})  {}{}", b.lower, b.upper, b.count, if b.overflow { "  overflow" } else { "" });
    }
    Ok(())
}
