//! The delayed rate equation and its decay envelope.
//!
//! For a system whose error norm satisfies D+ u <= -sigma_bar u + sigma_under
//! sup of u over the delay window, the decay rate lambda solves
//!
//!   lambda - sigma_bar + sigma_under * exp(lambda * tau_max) = 0.
//!
//! This example solves the equation across a sweep of delays and prints the
//! resulting envelopes, including the two closed-form limits.
//!
//! Run with: cargo run --example halanay_rate

use contranet::halanay::{decay_envelope, rate_residual, solve_rate, HalanayParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("rate equation solutions (sigma_bar = 2, sigma_under = 1):");
    println!("{:>10} {:>18} {:>12}", "tau_max", "lambda", "residual");
    for tau in [0.0, 0.25, 0.5, 1.0, 2.0, 5.0] {
        let p = HalanayParams::new(2.0, 1.0, tau)?;
        let lambda = solve_rate(&p);
        println!("{tau:>10.2} {lambda:>18.12} {:>12.2e}", rate_residual(&p, lambda));
    }

    // Closed-form limits: no delayed term -> lambda = sigma_bar; zero delay
    // -> lambda = sigma_bar - sigma_under.
    let undelayed = HalanayParams::new(2.0, 0.0, 5.0)?;
    println!("\nsigma_under = 0: lambda = {}", solve_rate(&undelayed));
    let instant = HalanayParams::new(2.0, 1.0, 0.0)?;
    println!("tau_max = 0:     lambda = {}", solve_rate(&instant));

    // The envelope: u0 decaying at the solved rate plus the residual offset.
    let p = HalanayParams::new(2.0, 1.0, 1.0)?;
    let lambda = solve_rate(&p);
    println!("\nenvelope u(t) <= u0 e^(-lambda t) + c / (sigma_bar - sigma_under)");
    println!("with u0 = 1, c = 0.1, lambda = {lambda:.12}:");
    for t in [0.0, 1.0, 2.0, 5.0, 10.0] {
        println!("  t = {t:>4.1}: {:.6}", decay_envelope(&p, 1.0, 0.1, t));
    }
    // The offset alone is c / (sigma_bar - sigma_under) = 0.1.
    let floor = decay_envelope(&p, 0.0, 0.1, 0.0);
    println!("asymptotic offset = {floor:.6}");
    Ok(())
}
