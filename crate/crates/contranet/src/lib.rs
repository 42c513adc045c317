//! Contraction certificates, gain synthesis, and closed-loop simulation for
//! networks of agents coupled through delayed and delay-free layers.
//!
//! The library answers three questions about a nonlinear networked system
//! with multiplex integral control and heterogeneous time-varying delays:
//!
//! * **Is the closed loop provably stable?** [`certify`] checks a
//!   contraction certificate built from composite block norms
//!   ([`linalg`]): per-agent matrix measures plus majorant row sums must
//!   leave a positive instantaneous margin that dominates the delayed
//!   gains. A feasible certificate yields an exponential rate from the
//!   delayed-rate equation ([`halanay`]) and an explicit input-to-output
//!   error envelope.
//! * **How should the gains be chosen?** [`synthesis`] searches transform
//!   and gain grids on a ring-reduced model, maximizing the instantaneous
//!   margin and then allocating the delayed-gain budget, with a
//!   PSD-feasibility formulation equivalent to the norm conditions.
//! * **Does it work in simulation?** [`simulator`] integrates the delayed
//!   closed loop (fourth-order fixed-step with cubic-Hermite history
//!   lookup) and reports composite error metrics; [`mtdc`] packages the
//!   30-terminal DC-grid ring case study end to end; [`netmodel`] holds
//!   the network description both share.
//!
//! The [`cli`] module exposes the same pipeline as subcommands
//! (`rate | certify | synth | simulate | mtdc`) over declarative JSON
//! descriptions, writing JSON/CSV artifacts plus a run manifest.
//!
//! # Examples
//!
//! Each major capability has a runnable example under `examples/`:
//!
//! * `composite_measures` — block majorant bounds dominating brute-force
//!   norm and measure quotients.
//! * `halanay_rate` — the delayed-rate equation: closed-form limits, a
//!   delay sweep, and decay envelopes.
//! * `certify_ring` — certificate for the 30-terminal ring at the
//!   reference design point, plus an infeasible variant.
//! * `synthesize_gains` — grid search on an 8-terminal ring and an
//!   independent certificate for the returned design point.
//! * `simulate_delay` — a saturating nonlinear triangle with sinusoidal
//!   delays: certificate, simulation, and envelope check.
//! * `mtdc_case_study` — the full disturbance-rejection case study
//!   (`--quick` and `--synthesize` variants).
//!
//! Run one with `cargo run --example <name>`.

pub mod certify;
pub mod cli;
pub mod halanay;
pub mod linalg;
pub mod mtdc;
pub mod netmodel;
pub mod synthesis;
pub mod simulator;
