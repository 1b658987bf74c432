//! Fit a natural cubic smoothing spline to a monthly price series with the
//! smoothing parameter fixed at the inverse-gamma prior mean.
//!
//! `cargo run --example smoothing_spline`

use usage_pricing::spline::{fit, lambda_from_prior, select_knots, spline_mse, stable_price, PriorSpec};

fn main() -> usage_pricing::Result<()> {
    let prices = [
        0.008412, 0.008190, 0.008301, 0.008025, 0.008117, 0.008266, 0.008102, 0.008391,
        0.008150, 0.007984, 0.008233, 0.008179, 0.008058, 0.008322,
    ];
    let xs: Vec<f64> = (1..=prices.len()).map(|i| i as f64).collect();

    let lambda = lambda_from_prior(PriorSpec::REFERENCE)?;
    let knots = select_knots(&xs, 8)?;
    println!("lambda {lambda}, knots {knots:?}");

    let f = fit(&xs, &prices, lambda, &knots)?;
    println!("\nmonth  observed   fitted");
    for (x, (y, g)) in xs.iter().zip(prices.iter().zip(&f.fitted)) {
        println!("{x:>5}  {y:.6}  {g:.6}");
    }
    println!("\nroughness {:.3e}", f.roughness());
    println!("MSE {:.6e}", spline_mse(&f, &xs, &prices)?);
    println!("stable price {:.6}", stable_price(&f));

    println!("\nsegment cubics a x^3 + b x^2 + c x + d:");
    for s in &f.segments {
        let [a, b, c, d] = s.monomial();
        println!("  [{:>6.3}, {:>6.3}]  {a:+.3e} {b:+.3e} {c:+.3e} {d:+.3e}", s.left, s.right);
    }

    for lambda in [1e-10, 1e10] {
        let g = fit(&xs, &prices, lambda, &xs)?;
        println!("lambda {lambda:e}: MSE {:.3e}", spline_mse(&g, &xs, &prices)?);
    }
    Ok(())
}
