//! Delayed convergence rates: solve the scalar rate equation
//! `lambda - sigma_bar + sigma_under * exp(lambda * tau_max) = 0` and
//! evaluate the exponential-plus-offset decay envelope it certifies.
//!
//! The rate equation arises from differential inequalities of the form
//! `D+ v(t) <= -sigma_bar * v(t) + sigma_under * sup v over the delay window`:
//! whenever `sigma_bar > sigma_under >= 0`, solutions decay like
//! `exp(-lambda t)` with `lambda` the unique positive root, and a bounded
//! forcing term `c` adds a steady offset `c / (sigma_bar - sigma_under)`.

use std::fmt;

/// Errors raised when assembling rate parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum HalanayError {
    /// `sigma_bar` must be positive and finite.
    BadSigmaBar(f64),
    /// `sigma_under` must be nonnegative and finite.
    BadSigmaUnder(f64),
    /// `tau_max` must be nonnegative and finite.
    BadTauMax(f64),
    /// The instantaneous rate must strictly dominate the delayed one.
    NotContracting { sigma_bar: f64, sigma_under: f64 },
}

impl fmt::Display for HalanayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HalanayError::BadSigmaBar(v) => {
                write!(f, "sigma_bar must be positive and finite, got {v}")
            }
            HalanayError::BadSigmaUnder(v) => {
                write!(f, "sigma_under must be nonnegative and finite, got {v}")
            }
            HalanayError::BadTauMax(v) => {
                write!(f, "tau_max must be nonnegative and finite, got {v}")
            }
            HalanayError::NotContracting { sigma_bar, sigma_under } => write!(
                f,
                "need sigma_bar > sigma_under for a positive rate, got {sigma_bar} <= {sigma_under}"
            ),
        }
    }
}

impl std::error::Error for HalanayError {}

/// Parameters of the delayed rate equation. Valid by construction:
/// `sigma_bar > 0`, `sigma_under >= 0`, `tau_max >= 0`, and strict dominance
/// `sigma_bar > sigma_under`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalanayParams {
    sigma_bar: f64,
    sigma_under: f64,
    tau_max: f64,
}

impl HalanayParams {
    pub fn new(sigma_bar: f64, sigma_under: f64, tau_max: f64) -> Result<Self, HalanayError> {
        if !(sigma_bar.is_finite() && sigma_bar > 0.0) {
            return Err(HalanayError::BadSigmaBar(sigma_bar));
        }
        if !(sigma_under.is_finite() && sigma_under >= 0.0) {
            return Err(HalanayError::BadSigmaUnder(sigma_under));
        }
        if !(tau_max.is_finite() && tau_max >= 0.0) {
            return Err(HalanayError::BadTauMax(tau_max));
        }
        if sigma_bar <= sigma_under {
            return Err(HalanayError::NotContracting { sigma_bar, sigma_under });
        }
        Ok(Self { sigma_bar, sigma_under, tau_max })
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    pub fn sigma_under(&self) -> f64 {
        self.sigma_under
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }
}

/// Residual of the rate equation at a candidate rate:
/// `lambda - sigma_bar + sigma_under * exp(lambda * tau_max)`.
pub fn rate_residual(p: &HalanayParams, lambda: f64) -> f64 {
    lambda - p.sigma_bar + p.sigma_under * (lambda * p.tau_max).exp()
}

/// Unique positive root of the rate equation.
///
/// Two degenerate cases are returned exactly without iteration:
/// no delayed term (`sigma_under = 0`) gives `lambda = sigma_bar`, and no
/// delay (`tau_max = 0`) gives `lambda = sigma_bar - sigma_under`. Otherwise
/// the residual is strictly increasing in `lambda`, negative at 0 and
/// nonnegative at `sigma_bar`, so 60 bisection steps on `[0, sigma_bar]`
/// isolate the root to about `sigma_bar * 2^-60`.
pub fn solve_rate(p: &HalanayParams) -> f64 {
    if p.sigma_under == 0.0 {
        return p.sigma_bar;
    }
    if p.tau_max == 0.0 {
        return p.sigma_bar - p.sigma_under;
    }
    let mut lo = 0.0_f64;
    let mut hi = p.sigma_bar;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate_residual(p, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Decay envelope certified by the rate equation: starting magnitude `u0`,
/// constant forcing bound `c`, elapsed time `t >= 0`:
///
/// `u0 * exp(-lambda t) + c / (sigma_bar - sigma_under)`.
///
/// Nonincreasing in `t`; at `t = 0` it equals `u0 + c / (sigma_bar - sigma_under)`.
pub fn decay_envelope(p: &HalanayParams, u0: f64, c: f64, t: f64) -> f64 {
    debug_assert!(u0 >= 0.0 && c >= 0.0 && t >= 0.0);
    let lambda = solve_rate(p);
    u0 * (-lambda * t).exp() + c / (p.sigma_bar - p.sigma_under)
}
