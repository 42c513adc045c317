//! Simulating (and certifying) a nonlinear ring with time-varying delays.
//!
//! Three agents with the saturating dynamics x' = -2x + 0.5 tanh(x), coupled
//! diffusively through sinusoidally varying delays. The tanh slope peaks at
//! the origin, so the origin linearization is the worst case and its
//! certificate extends to the whole state space: the simulated error must
//! stay under the certified envelope, and it does.
//!
//! Run with: cargo run --example simulate_delay

use contranet::certify::{certify, iss_envelope, Transformation};
use contranet::linalg::{DenseMatrix, NormSpec, PNorm};
use contranet::netmodel::{
    assemble_jacobian_blocks, AgentDynamics, CouplingLayer, DelayFn, DelayKey, DelaySchedule,
    DesiredSolution, DisturbanceModel, MultiplexNetwork, PairMap, PairTerm, TermMap, TermRole,
};
use contranet::simulator::{
    composite_augmented_error, error_metrics, simulate, InitialHistory, SimConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 3;
    let saturating = || TermMap::Custom {
        value: Box::new(|x: &[f64], _t: f64| vec![-2.0 * x[0] + 0.5 * x[0].tanh()]),
        jacobian: Box::new(|x: &[f64], _t: f64| {
            let s = x[0].tanh();
            DenseMatrix::new(1, 1, vec![-2.0 + 0.5 * (1.0 - s * s)]).unwrap()
        }),
    };
    let agents: Vec<AgentDynamics> = (0..n).map(|_| AgentDynamics::new(1, saturating())).collect();

    let mut delays = DelaySchedule::new(0.2)?;
    let mut layer = CouplingLayer::empty();
    for i in 0..n {
        for j in [(i + n - 1) % n, (i + 1) % n] {
            delays.insert(
                DelayKey::Edge { to: i, from: j },
                DelayFn::Sinusoidal { base: 0.15, amplitude: 0.05, phase: i as f64 },
            )?;
            layer.delayed_pair_terms.push(PairTerm {
                to: i,
                from: j,
                map: PairMap::diffusive(DenseMatrix::new(1, 1, vec![0.1])?),
                role: TermRole::Control,
            });
        }
    }

    let net = MultiplexNetwork::new(
        agents,
        vec![layer],
        delays,
        DisturbanceModel::zero(&[1, 1, 1], 0),
        None,
        DesiredSolution::Zero,
    )?;

    // Certify the origin linearization: tanh'(0) = 1 is the global bound.
    let spec = NormSpec::uniform(PNorm::Two, n)?;
    let blocks = assemble_jacobian_blocks(&net, 0.0)?;
    let transform = Transformation::uniform(DenseMatrix::new(1, 1, vec![1.0])?, n)?;
    let cert = certify(&blocks, &transform, &spec)?;
    println!(
        "certificate: sigma_bar = {:.4}, sigma_under = {:.4}, lambda = {:.6}",
        cert.sigma_bar,
        cert.sigma_under,
        cert.lambda.unwrap()
    );

    let cfg = SimConfig {
        t0: 0.0,
        horizon: 12.0,
        dt: 5e-3,
        history: InitialHistory::GaussianStates { std: 1.0 },
        seed: 42,
    };
    let trace = simulate(&net, &cfg, &spec)?;
    let metrics = error_metrics(&trace, &net, &spec, 8.0, 1e-3 * trace.composite_error[0])?;
    println!(
        "simulated {} mesh points: composite error {:.6} -> {:.3e}",
        trace.len(),
        trace.composite_error[0],
        metrics.final_error
    );
    if let Some(t) = metrics.time_to_threshold {
        println!("error settled below threshold at t = {t:.3}");
    }

    // Envelope dominance: the initial window's worst error decays at the
    // certified rate (no disturbance, so no offset).
    let u0 = composite_augmented_error(&trace, &net, &spec, 0)?;
    let mut worst_ratio: f64 = 0.0;
    for ti in 0..trace.len() {
        let bound = iss_envelope(&cert, u0, 0.0, 1.0, trace.times[ti])?;
        assert!(trace.composite_error[ti] <= bound + 1e-9, "envelope violated");
        worst_ratio = worst_ratio.max(trace.composite_error[ti] / bound);
    }
    println!("error/envelope ratio peaks at {worst_ratio:.3} (never above 1)");
    Ok(())
}
