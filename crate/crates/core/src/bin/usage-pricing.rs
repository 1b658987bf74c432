use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use usage_pricing::fixture::{generate, write_fixture, FixtureConfig};
use usage_pricing::pipeline::{
    cmd_analyze, cmd_audit, cmd_ingest, cmd_price, parse_breakpoints, parse_window, Overrides,
    PipelineConfig,
};
use usage_pricing::{MonthKey, Result};

#[derive(Parser)]
#[command(version, about = "Stable price-per-request estimation, tier pricing and usage audits")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Analysis window, e.g. 2015-11..2016-12
    #[arg(long, global = true)]
    window: Option<String>,
    /// Inverse-gamma shape of the smoothing-parameter prior
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Inverse-gamma scale of the smoothing-parameter prior
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Audit threshold as a multiple of typical usage
    #[arg(long, global = true)]
    multiplier: Option<f64>,
    /// Comma-separated tier percentiles, e.g. 25,35,45,55,65,78,85
    #[arg(long, global = true)]
    breakpoints: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate the input tables into monthly totals and a price series
    Ingest,
    /// Unit-root tests, ARIMA selection and spline fit of the price series
    Analyze,
    /// Tier table, invoice projection, comparison and change histograms
    Price {
        /// Unit price to use instead of the analyzed stable price
        #[arg(long)]
        unit_price: Option<f64>,
    },
    /// Monthly under-reporting audit (defaults to the window's last month)
    Audit {
        #[arg(long)]
        month: Option<MonthKey>,
    },
    /// Write a synthetic dataset into the data directory
    GenFixture {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        customers: usize,
        #[arg(long, default_value_t = 18)]
        months: usize,
        #[arg(long, default_value_t = 3)]
        under_reporters: usize,
        #[arg(long, default_value = "2015-11")]
        start: MonthKey,
    },
}

fn config(c: &Common) -> Result<PipelineConfig> {
    let base = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    Ok(base.apply(Overrides {
        data_dir: c.data_dir.clone(),
        out_dir: c.out_dir.clone(),
        window: c.window.as_deref().map(parse_window).transpose()?,
        alpha: c.alpha,
        beta: c.beta,
        multiplier: c.multiplier,
        breakpoints: c.breakpoints.as_deref().map(parse_breakpoints).transpose()?,
    }))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::Ingest => {
            let out = cmd_ingest(&cfg)?;
            println!(
                "{} months ingested into {}",
                out.aggregates.len(),
                cfg.out_dir.display()
            );
        }
        Command::Analyze => {
            let r = cmd_analyze(&cfg)?;
            for u in &r.unit_root {
                match (&u.decision, &u.error) {
                    (Some(d), _) => println!("{}: {d}", u.name),
                    (None, Some(e)) => eprintln!("warning: {} skipped: {e}", u.name),
                    _ => {}
                }
            }
            println!("{} MSE {:e}, median {:.6}", r.arima.model, r.arima.mse, r.arima.median);
            println!("spline MSE {:e}, median {:.6}", r.spline.mse, r.spline.median);
            println!("stable price {:.6}", r.stable_price);
        }
        Command::Price { unit_price } => {
            let out = cmd_price(&cfg, unit_price)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for c in &out.comparisons {
                println!(
                    "{}: actual {} projected {:.2} change {:.2}%",
                    c.month, c.actual, c.projected, c.pct_change
                );
            }
        }
        Command::Audit { month } => {
            let r = cmd_audit(&cfg, month)?;
            println!("{}: {} finding(s)", r.month, r.findings.len());
        }
        Command::GenFixture {
            seed,
            customers,
            months,
            under_reporters,
            start,
        } => {
            let f = generate(&FixtureConfig {
                seed,
                customers,
                months,
                start,
                under_reporters,
            })?;
            write_fixture(&cfg.data_dir, &f)?;
            println!("fixture written to {}", cfg.data_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
