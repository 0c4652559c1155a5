//! Minimum training-set sizes for linear models from the VC risk bound
//!
//! ```text
//! R(α) <= R_emp(α) / (1 - c·sqrt(ε))_+
//! ε = a1 · (h·(ln(a2·l/h) + 1) - ln(η/4)) / l
//! ```
//!
//! The bound is finite only while ε < 1, so the smallest admissible training
//! size for a hypothesis class of VC dimension `h` is the root of ε(l) = 1.
//! [`buffer_size`] is the conservative closed-form rule the learner uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default confidence parameter.
pub const DEFAULT_ETA: f64 = 0.01;

/// Absolute tolerance on `l` for the bisection solve.
const BISECTION_TOL: f64 = 1e-6;

/// Inputs of the ε term. `l` is real so it can be solved for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundQuery {
    pub h: u32,
    pub l: f64,
    pub eta: f64,
    pub a1: f64,
    pub a2: f64,
    pub c: f64,
}

impl BoundQuery {
    /// Query with `a1 = a2 = c = 1`.
    pub fn new(h: u32, l: f64, eta: f64) -> Self {
        Self {
            h,
            l,
            eta,
            a1: 1.0,
            a2: 1.0,
            c: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::InvalidArgument("VC dimension h must be >= 1".into()));
        }
        if !(self.l > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "training size l must be positive, got {}",
                self.l
            )));
        }
        check_eta(self.eta)?;
        if !(self.a1 > 0.0 && self.a2 > 0.0 && self.c > 0.0) {
            return Err(Error::InvalidArgument(
                "bound constants a1, a2, c must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "eta must lie in (0, 1), got {eta}"
        )))
    }
}

/// One row of the bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSolution {
    pub h: u32,
    pub l_star: f64,
    pub l_rule: u32,
}

pub fn epsilon(q: &BoundQuery) -> Result<f64> {
    q.validate()?;
    let h = f64::from(q.h);
    Ok(q.a1 * (h * ((q.a2 * q.l / h).ln() + 1.0) - (q.eta / 4.0).ln()) / q.l)
}

/// Upper bound on the expected risk. Returns `f64::INFINITY` once the
/// denominator `(1 - c·sqrt(ε))` reaches zero.
pub fn risk_bound(emp_risk: f64, q: &BoundQuery) -> Result<f64> {
    if !(emp_risk >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "empirical risk must be nonnegative, got {emp_risk}"
        )));
    }
    let eps = epsilon(q)?;
    Ok(risk_bound_from_epsilon(emp_risk, eps, q.c))
}

pub(crate) fn risk_bound_from_epsilon(emp_risk: f64, eps: f64, c: f64) -> f64 {
    let denom = 1.0 - c * eps.sqrt();
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        emp_risk / denom
    }
}

/// Smallest training size `l > h` with ε(h, l, η) = 1, by bisection.
///
/// The bracket starts at `[h, 10h + 100]` and is widened tenfold once if it
/// does not straddle the root.
pub fn min_training_size(h: u32, eta: f64) -> Result<f64> {
    if h == 0 {
        return Err(Error::InvalidArgument("VC dimension h must be >= 1".into()));
    }
    check_eta(eta)?;
    let f = |l: f64| epsilon(&BoundQuery::new(h, l, eta)).map(|e| e - 1.0);

    let lo = f64::from(h);
    let mut hi = 10.0 * lo + 100.0;
    // ε(h, h) = 1 + ln(4/η)/h > 1, so the lower end is always positive.
    let f_lo = f(lo)?;
    let mut f_hi = f(hi)?;
    if f_lo.signum() == f_hi.signum() {
        hi *= 10.0;
        f_hi = f(hi)?;
        if f_lo.signum() == f_hi.signum() {
            return Err(Error::NoBracket { h, lo, hi });
        }
    }
    bisect(f, lo, hi, f_lo)
}

fn bisect(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, mut f_lo: f64) -> Result<f64> {
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Buffer size for a linear model over `n` inputs plus bias: `2(n+1) + 10`.
pub fn buffer_size(n: usize) -> usize {
    2 * (n + 1) + 10
}

/// Bound solutions for `h = 1..=h_max`. The rule column uses `n = h - 1`.
pub fn bound_table(h_max: u32, eta: f64) -> Result<Vec<BoundSolution>> {
    if h_max == 0 {
        return Err(Error::InvalidArgument("h_max must be >= 1".into()));
    }
    (1..=h_max)
        .map(|h| {
            Ok(BoundSolution {
                h,
                l_star: min_training_size(h, eta)?,
                l_rule: buffer_size(h as usize - 1) as u32,
            })
        })
        .collect()
}
