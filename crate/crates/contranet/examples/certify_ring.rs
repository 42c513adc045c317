//! Certifying the DC-ring design point, and watching it break.
//!
//! Builds the 30-terminal ring at the stock gains, assembles the augmented
//! Jacobian blocks, and runs the two row families of the certificate: the
//! instantaneous rows must contract faster than the delayed rows can excite.
//! Scaling the delayed gains up by 1000 flips the verdict — the certificate
//! reports infeasibility as a result, not an error.
//!
//! Run with: cargo run --example certify_ring

use contranet::certify::iss_envelope;
use contranet::linalg::{NormSpec, PNorm};
use contranet::mtdc::{build_mtdc, certify_mtdc, reference_gains, MtdcParams};
use contranet::synthesis::GainVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = MtdcParams::default();
    let (gains, tp) = reference_gains();
    let spec = NormSpec::uniform(PNorm::Two, p.n)?;

    let net = build_mtdc(&p, &gains)?;
    let cert = certify_mtdc(&net, &tp, &spec)?;

    println!("ring of {} terminals, tau_max = {}", p.n, p.tau_max());
    println!("gains k = {:?}, kt = {:?}", gains.ks(), gains.kts());
    println!();
    println!("sigma_bar   = {:.6e}  (instantaneous contraction margin)", cert.sigma_bar);
    println!("sigma_under = {:.6e}  (total delayed gain)", cert.sigma_under);
    println!("feasible    = {}", cert.feasible);
    println!("lambda      = {:.12}", cert.lambda.unwrap());
    println!("cond_T      = {:.6}", cert.cond_t);
    // Ring symmetry: every agent sees the same rows.
    let spread = cert
        .c2_rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
    println!("row spread  = {:.3e} (identical rows on a symmetric ring)", spread.1 - spread.0);

    // The certificate is an ISS envelope factory: starting error 1.0,
    // residual disturbance bounded by 0.05.
    println!("\nenvelope for u0 = 1, w_sup = 0.05:");
    for t in [0.0, 60.0, 120.0, 300.0] {
        println!("  t = {t:>5.0}: {:.6}", iss_envelope(&cert, 1.0, 0.05, 1.0, t)?);
    }

    // Now the broken variant: delayed gains scaled x1000.
    let heavy = GainVector::new(gains.ks(), gains.kts().map(|k| 1000.0 * k));
    let net = build_mtdc(&p, &heavy)?;
    let bad = certify_mtdc(&net, &tp, &spec)?;
    println!("\nwith delayed gains x1000:");
    println!("sigma_bar   = {:.6e}", bad.sigma_bar);
    println!("sigma_under = {:.6e}", bad.sigma_under);
    println!("feasible    = {} (delayed rows overwhelm the contraction)", bad.feasible);
    assert!(!bad.feasible);
    Ok(())
}
