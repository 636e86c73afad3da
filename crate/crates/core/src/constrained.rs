//! The problem with an expectation constraint `E[τ] ≤ α`, reduced to the
//! unconstrained one at the shifted operating cost `c + λ̂`.
//!
//! `α = f64::INFINITY` means "unconstrained".

use rayon::prelude::*;
use thiserror::Error;

use crate::montecarlo::Policy;
use crate::problem::ProblemInstance;
use crate::solver::{solve_threshold, SolverError, ThresholdResult, ValueFunction};

/// Below this the multiplier is indistinguishable from zero.
const LAMBDA_FLOOR: f64 = 1e-300;
const MAX_DOUBLINGS: u32 = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstrainedError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("E[tau] stays above alpha = {alpha} up to lambda = {lambda:e}")]
    NoFeasibleMultiplier { alpha: f64, lambda: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn check_inputs(x: f64, c: f64, alpha: f64) -> Result<(), ConstrainedError> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(ConstrainedError::InvalidInput(format!(
            "x must be finite and nonnegative, got {x}"
        )));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(ConstrainedError::InvalidInput(format!(
            "c must be finite and nonnegative, got {c}"
        )));
    }
    if !(alpha >= 0.0) {
        return Err(ConstrainedError::InvalidInput(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    Ok(())
}

fn expected_tau(threshold: &ThresholdResult, instance: &ProblemInstance, x: f64) -> f64 {
    match threshold.boundary() {
        Some(fb) if x > fb.s => {
            2.0 / (instance.structural_a() - 2.0 * fb.u_star)
                * instance.drift().reciprocal_integral(fb.s, x)
        }
        _ => 0.0,
    }
}

/// `E[τ*]` under the optimal policy for operating cost `c_eff`; zero when
/// `x ≤ s(c_eff)` or the threshold is infinite.
pub fn expected_optimal_stop_time(
    instance: &ProblemInstance,
    x: f64,
    c_eff: f64,
) -> Result<f64, ConstrainedError> {
    if !(c_eff > 0.0 && c_eff.is_finite()) {
        return Err(ConstrainedError::InvalidInput(format!(
            "effective cost must be positive, got {c_eff}"
        )));
    }
    let shifted = instance.with_operating_cost(c_eff);
    Ok(expected_tau(&solve_threshold(&shifted)?, &shifted, x.abs()))
}

/// The smallest `λ ≥ 0` with `E[τ*_{x, c+λ}] ≤ α`.
///
/// The map `λ ↦ E[τ*_{x,c+λ}]` is nonincreasing, so after doubling an upper
/// bracket the search bisects down to adjacent floating-point neighbours and
/// returns the feasible end. For `c = 0` the expectation is never evaluated
/// at zero effective cost; a multiplier that collapses below `1e-300` is
/// reported as `0`.
pub fn solve_lagrange_multiplier(
    instance: &ProblemInstance,
    x: f64,
    c: f64,
    alpha: f64,
) -> Result<f64, ConstrainedError> {
    check_inputs(x, c, alpha)?;
    if alpha == f64::INFINITY {
        return Ok(0.0);
    }
    let e = |lambda: f64| expected_optimal_stop_time(instance, x, c + lambda);
    if c > 0.0 && e(0.0)? <= alpha {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while e(hi)? > alpha {
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(ConstrainedError::NoFeasibleMultiplier { alpha, lambda: hi });
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || c + mid == c + hi {
            break;
        }
        if e(mid)? <= alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(if c == 0.0 && hi < LAMBDA_FLOOR {
        0.0
    } else {
        hi
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    pub x: f64,
    pub c: f64,
    pub alpha: f64,
    pub lambda_hat: f64,
    pub effective_c: f64,
    pub threshold: ThresholdResult,
    /// V_α(x, c) = V(x, c + λ̂) − λ̂·α
    pub value: f64,
    pub expected_tau: f64,
    /// λ̂·(α − E[τ*])
    pub slackness_residual: f64,
    /// `c = 0` with `λ̂ = 0`: the value is the `c → 0⁺` limit `k(0)`.
    pub degenerate_zero_cost: bool,
}

impl ConstrainedSolution {
    pub fn policy(&self) -> Policy {
        if self.degenerate_zero_cost {
            return Policy::StopAtOnce;
        }
        match self.threshold {
            ThresholdResult::Finite(fb) => Policy::ConstantThreshold {
                u: fb.u_star,
                s: fb.s,
            },
            ThresholdResult::Infinite => Policy::StopAtOnce,
        }
    }
}

pub fn constrained_value(
    instance: &ProblemInstance,
    x: f64,
    c: f64,
    alpha: f64,
) -> Result<ConstrainedSolution, ConstrainedError> {
    let lambda_hat = solve_lagrange_multiplier(instance, x, c, alpha)?;
    let effective_c = c + lambda_hat;
    let shifted = instance.with_operating_cost(effective_c);
    let degenerate_zero_cost = effective_c == 0.0;
    let vf = ValueFunction::solve(&shifted)?;
    let threshold = if degenerate_zero_cost {
        ThresholdResult::Infinite
    } else {
        vf.threshold()
    };
    let expected_tau = if degenerate_zero_cost {
        0.0
    } else {
        expected_tau(&threshold, &shifted, x)
    };
    let (penalty, slackness_residual) = if lambda_hat == 0.0 {
        (0.0, 0.0)
    } else {
        (lambda_hat * alpha, lambda_hat * (alpha - expected_tau))
    };
    Ok(ConstrainedSolution {
        x,
        c,
        alpha,
        lambda_hat,
        effective_c,
        threshold,
        value: vf.value_at(x)? - penalty,
        expected_tau,
        slackness_residual,
        degenerate_zero_cost,
    })
}

/// |central difference of V in c − E[τ*_{x,c}]|.
pub fn envelope_residual(
    instance: &ProblemInstance,
    x: f64,
    c: f64,
    h: f64,
) -> Result<f64, ConstrainedError> {
    if !(h > 0.0 && c - h > 0.0) {
        return Err(ConstrainedError::InvalidInput(format!(
            "need 0 < h < c, got c = {c}, h = {h}"
        )));
    }
    let v = |cc: f64| -> Result<f64, ConstrainedError> {
        let inst = instance.with_operating_cost(cc);
        Ok(ValueFunction::solve(&inst)?.value_at(x)?)
    };
    let fd = (v(c + h)? - v(c - h)?) / (2.0 * h);
    Ok((fd - expected_optimal_stop_time(instance, x, c)?).abs())
}

/// `(λ, V(x, c+λ) − λα)` over `lambda_grid`, evaluated in parallel with the
/// input order preserved.
pub fn dual_value_scan(
    instance: &ProblemInstance,
    x: f64,
    c: f64,
    alpha: f64,
    lambda_grid: &[f64],
) -> Result<Vec<(f64, f64)>, ConstrainedError> {
    check_inputs(x, c, alpha)?;
    if !alpha.is_finite() {
        return Err(ConstrainedError::InvalidInput(
            "the dual scan needs a finite alpha".into(),
        ));
    }
    if lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite()))
        || lambda_grid.windows(2).any(|w| w[1] < w[0])
    {
        return Err(ConstrainedError::InvalidInput(
            "lambda grid must be finite, nonnegative and ascending".into(),
        ));
    }
    lambda_grid
        .par_iter()
        .map(|&lambda| {
            let inst = instance.with_operating_cost(c + lambda);
            let v = ValueFunction::solve(&inst)?.value_at(x)?;
            Ok((lambda, v - lambda * alpha))
        })
        .collect()
}
