//! An invertible MA(1) is an AR(∞) and a stationary AR(1) is an MA(∞):
//! compare impulse responses of the truncated representations.
//!
//! `cargo run --example ma_ar_duality`

use usage_pricing::arima::{ar1_to_ma, ar_impulse_response, ma1_to_ar, ma_impulse_response};

fn main() -> usage_pricing::Result<()> {
    let k = 20;
    println!("theta   max |response gap|   |theta|^(K+1)");
    for theta in [0.3, -0.3, 0.6, -0.6, 0.9, -0.9] {
        let ar = ma1_to_ar(theta, k)?;
        let a = ar_impulse_response(&ar, 3 * k);
        let m = ma_impulse_response(&[theta], 3 * k);
        let gap = a.iter().zip(&m).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        println!("{theta:>5}   {gap:>18.3e}   {:>13.3e}", theta.abs().powi(k as i32 + 1));
    }

    let rho = 0.7;
    let ma = ar1_to_ma(rho, 8)?;
    println!("\nAR(1) rho = {rho} as MA weights: {:?}", ma.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>());
    Ok(())
}
