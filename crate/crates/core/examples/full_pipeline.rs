//! The whole workflow on a generated dataset: ingest, analyze, price and
//! audit, writing every output file into a temporary directory.
//!
//! `cargo run --example full_pipeline`

use usage_pricing::fixture::{generate, write_fixture, FixtureConfig};
use usage_pricing::pipeline::{cmd_analyze, cmd_audit, cmd_ingest, cmd_price, PipelineConfig};

fn main() -> usage_pricing::Result<()> {
    let root = tempfile::tempdir().expect("temp dir");
    let cfg = PipelineConfig {
        data_dir: root.path().join("data"),
        out_dir: root.path().join("out"),
        ..PipelineConfig::default()
    };
    write_fixture(&cfg.data_dir, &generate(&FixtureConfig::default())?)?;

    let ingest = cmd_ingest(&cfg)?;
    println!("ingested {} months", ingest.aggregates.len());

    let analysis = cmd_analyze(&cfg)?;
    for u in &analysis.unit_root {
        println!("{}: {}", u.name, u.decision.as_deref().or(u.error.as_deref()).unwrap_or(""));
    }
    println!(
        "{}: MSE {:.3e}, median {:.6}",
        analysis.arima.model, analysis.arima.mse, analysis.arima.median
    );
    println!("spline: MSE {:.3e}, median {:.6}", analysis.spline.mse, analysis.spline.median);
    println!("stable price {:.6} ({:?})", analysis.stable_price, analysis.chosen);

    let price = cmd_price(&cfg, None)?;
    println!("caps {:?}", price.table.caps());
    for c in &price.comparisons {
        println!("{}: actual {} projected {:.2} ({:+.2}%)", c.month, c.actual, c.projected, c.pct_change);
    }

    let report = cmd_audit(&cfg, None)?;
    println!("audit {}: {} finding(s)", report.month, report.findings.len());

    let mut files: Vec<_> = std::fs::read_dir(&cfg.out_dir)
        .expect("output dir")
        .map(|e| e.expect("entry").file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    println!("outputs: {}", files.join(", "));
    Ok(())
}
