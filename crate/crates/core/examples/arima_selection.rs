//! Rank the candidate ARIMA models by AIC on a simulated MA(1) price series
//! and compare the best fit with a random walk.
//!
//! `cargo run --example arima_selection`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use usage_pricing::arima::{default_candidates, fitted_median, mse, select_model};
use usage_pricing::{MonthKey, MonthlySeries};

fn main() -> usage_pricing::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shock = Normal::new(0.0, 2e-4).expect("valid sd");
    let e: Vec<f64> = (0..=60).map(|_| shock.sample(&mut rng)).collect();
    // w_t − μ = ε_t − θ ε_{t−1}
    let values: Vec<f64> = (1..=60).map(|t| 0.0081 + e[t] - 0.6 * e[t - 1]).collect();
    let series = MonthlySeries::new(MonthKey::new(2012, 1)?, values)?;

    let (best, ranking) = select_model(&series, &default_candidates())?;
    println!("model            loglik        AIC");
    for row in &ranking.rows {
        println!("{:<14} {:>9.3} {:>10.3}", row.spec.to_string(), row.loglik, row.aic);
    }
    for f in &ranking.failures {
        println!("{:<14} failed: {}", f.spec.to_string(), f.reason);
    }

    println!("\nbest: {}  ar {:?}  ma {:?}  mean {:.6}", best.spec, best.ar, best.ma, best.mean);
    if let Some(se) = &best.std_errors {
        println!("standard errors {se:?}");
    }
    println!("in-sample MSE {:e}", mse(&best, &series));
    println!("median fitted price {:.6}", fitted_median(&best));
    Ok(())
}
