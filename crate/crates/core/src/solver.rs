//! Free-boundary solve for the stopping threshold, the value function built
//! from it, the optimal policy, and a grid check of the variational
//! inequalities.
//!
//! The threshold `s` is the unique root of `ζ(s) + c = 0` where
//! `ζ(z) = η(μ(z)k′(z)) − (A/2)·μ(z)k′(z)` is strictly decreasing on
//! `(0, ∞)`. When no root exists the controller stops at once and `V = k`.
//! Outside `[−s, s]` the value function is `k(s) + γ ∫_s^{|x|} dy/μ(y)` with
//! `γ = μ(s)k′(s)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::Policy;
use crate::problem::ProblemInstance;
use crate::quadrature::{self, QuadratureError};
use crate::roots::{self, RootError, RootOptions};

/// Probing beyond this abscissa without a sign change declares `s = ∞`.
pub const SEARCH_LIMIT: f64 = 1e12;
/// Half-width of the neighborhood around ±s excluded from VI grids.
pub const KINK_EXCLUSION: f64 = 1e-6;
const VALUE_QUAD_TOL: f64 = 1e-12;
const MIN_PROBE: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("operating cost must be positive for the threshold equation (c = {0})")]
    NonPositiveCost(f64),
    #[error("zeta is not monotone: zeta({z_lo}) + c = {g_lo} but zeta({z_hi}) + c = {g_hi}")]
    NonMonotone {
        z_lo: f64,
        g_lo: f64,
        z_hi: f64,
        g_hi: f64,
    },
    #[error("zeta(z) + c stays nonpositive down to z = {0}")]
    NoPositiveRegion(f64),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// The free boundary and the smooth-fit constants attached to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundary {
    pub s: f64,
    /// γ = μ(s)·k′(s)
    pub gamma: f64,
    /// b = k(s)
    pub b: f64,
    /// u* = ξ(−γ), the optimal constant control.
    pub u_star: f64,
    /// |ζ(s) + c|
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdResult {
    Finite(FreeBoundary),
    Infinite,
}

impl ThresholdResult {
    pub fn boundary(&self) -> Option<&FreeBoundary> {
        match self {
            ThresholdResult::Finite(fb) => Some(fb),
            ThresholdResult::Infinite => None,
        }
    }

    /// The threshold, `f64::INFINITY` when there is none.
    pub fn s(&self) -> f64 {
        self.boundary().map_or(f64::INFINITY, |fb| fb.s)
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ThresholdResult::Finite(_))
    }
}

/// ζ(z) = η(μ(z)k′(z)) − (A/2)·μ(z)k′(z)
pub fn zeta(instance: &ProblemInstance, z: f64) -> f64 {
    let w = instance.mu(z) * instance.k_prime(z);
    instance.conjugate().eta(w) - 0.5 * instance.structural_a() * w
}

fn monotone_slack(a: f64, b: f64) -> f64 {
    1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Solves `ζ(s) = −c` for `c > 0`.
pub fn solve_threshold(instance: &ProblemInstance) -> Result<ThresholdResult, SolverError> {
    let c = instance.operating_cost();
    if !(c > 0.0) {
        return Err(SolverError::NonPositiveCost(c));
    }
    let g = |z: f64| zeta(instance, z) + c;

    let z0 = 1.0;
    let g0 = g(z0);
    let (lo, hi) = if g0 > 0.0 {
        let (mut z_prev, mut g_prev) = (z0, g0);
        loop {
            let z = (2.0 * z_prev).min(SEARCH_LIMIT);
            let gz = g(z);
            if gz > g_prev + monotone_slack(gz, g_prev) {
                return Err(SolverError::NonMonotone {
                    z_lo: z_prev,
                    g_lo: g_prev,
                    z_hi: z,
                    g_hi: gz,
                });
            }
            if gz <= 0.0 {
                break (z_prev, z);
            }
            if z >= SEARCH_LIMIT {
                return Ok(ThresholdResult::Infinite);
            }
            z_prev = z;
            g_prev = gz;
        }
    } else {
        let (mut z_prev, mut g_prev) = (z0, g0);
        loop {
            let z = 0.5 * z_prev;
            if z < MIN_PROBE {
                return Err(SolverError::NoPositiveRegion(z_prev));
            }
            let gz = g(z);
            if gz < g_prev - monotone_slack(gz, g_prev) {
                return Err(SolverError::NonMonotone {
                    z_lo: z,
                    g_lo: gz,
                    z_hi: z_prev,
                    g_hi: g_prev,
                });
            }
            if gz > 0.0 {
                break (z, z_prev);
            }
            z_prev = z;
            g_prev = gz;
        }
    };

    let opts = RootOptions {
        x_tol: 0.0,
        f_tol: 1e-14 * c.max(1.0),
        max_iter: 500,
    };
    let root = roots::brent(g, lo, hi, opts)?;
    Ok(ThresholdResult::Finite(boundary_at(instance, root.x)))
}

fn boundary_at(instance: &ProblemInstance, s: f64) -> FreeBoundary {
    let gamma = instance.mu(s) * instance.k_prime(s);
    FreeBoundary {
        s,
        gamma,
        b: instance.k(s),
        u_star: instance.conjugate().xi(-gamma),
        residual: (zeta(instance, s) + instance.operating_cost()).abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// Control with `u*` until `|X| ≤ s`.
    Continue(FreeBoundary),
    /// No finite threshold: `V = k`.
    StopAtOnce,
    /// `c = 0`: `V ≡ k(0)`.
    ZeroCost,
}

/// The candidate value function assembled from a threshold result.
#[derive(Debug, Clone)]
pub struct ValueFunction<'a> {
    instance: &'a ProblemInstance,
    regime: Regime,
}

impl<'a> ValueFunction<'a> {
    /// Solves the threshold equation (or takes the `c = 0` shortcut).
    pub fn solve(instance: &'a ProblemInstance) -> Result<Self, SolverError> {
        if instance.operating_cost() == 0.0 {
            return Ok(Self {
                instance,
                regime: Regime::ZeroCost,
            });
        }
        Ok(Self::new(instance, solve_threshold(instance)?))
    }

    pub fn new(instance: &'a ProblemInstance, threshold: ThresholdResult) -> Self {
        let regime = if instance.operating_cost() == 0.0 {
            Regime::ZeroCost
        } else {
            match threshold {
                ThresholdResult::Finite(fb) => Regime::Continue(fb),
                ThresholdResult::Infinite => Regime::StopAtOnce,
            }
        };
        Self { instance, regime }
    }

    pub fn instance(&self) -> &ProblemInstance {
        self.instance
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    pub fn threshold(&self) -> ThresholdResult {
        match self.regime {
            Regime::Continue(fb) => ThresholdResult::Finite(fb),
            _ => ThresholdResult::Infinite,
        }
    }

    pub fn boundary(&self) -> Option<&FreeBoundary> {
        match &self.regime {
            Regime::Continue(fb) => Some(fb),
            _ => None,
        }
    }

    pub fn policy(&self) -> Policy {
        match self.regime {
            Regime::Continue(fb) => Policy::ConstantThreshold {
                u: fb.u_star,
                s: fb.s,
            },
            _ => Policy::StopAtOnce,
        }
    }

    /// `∫_s^x dy/μ(y)` by adaptive quadrature.
    fn drift_integral(&self, s: f64, x: f64) -> Result<f64, SolverError> {
        let inst = self.instance;
        Ok(quadrature::integrate(
            |y| 1.0 / inst.mu(y),
            s,
            x,
            VALUE_QUAD_TOL,
        )?)
    }

    pub fn value_at(&self, x: f64) -> Result<f64, SolverError> {
        let ax = x.abs();
        match self.regime {
            Regime::ZeroCost => Ok(self.instance.k(0.0)),
            Regime::StopAtOnce => Ok(self.instance.k(ax)),
            Regime::Continue(fb) if ax <= fb.s => Ok(self.instance.k(ax)),
            Regime::Continue(fb) => Ok(fb.b + fb.gamma * self.drift_integral(fb.s, ax)?),
        }
    }

    /// Exact V′(x).
    pub fn derivative(&self, x: f64) -> f64 {
        let ax = x.abs();
        let inner = match self.regime {
            Regime::ZeroCost => 0.0,
            Regime::StopAtOnce => self.instance.k_prime(ax),
            Regime::Continue(fb) if ax <= fb.s => self.instance.k_prime(ax),
            Regime::Continue(fb) => fb.gamma / self.instance.mu(ax),
        };
        if x < 0.0 {
            -inner
        } else {
            inner
        }
    }

    /// Exact V″(x) away from ±s.
    pub fn second_derivative(&self, x: f64) -> f64 {
        let ax = x.abs();
        match self.regime {
            Regime::ZeroCost => 0.0,
            Regime::StopAtOnce => self.instance.k_second(ax),
            Regime::Continue(fb) if ax <= fb.s => self.instance.k_second(ax),
            Regime::Continue(fb) => {
                let mu = self.instance.mu(ax);
                -fb.gamma * self.instance.mu_prime(ax) / (mu * mu)
            }
        }
    }

    /// |V′(s⁻) − V′(s⁺)| from second-order one-sided differences with step `h`.
    /// Zero when there is no finite threshold.
    pub fn smooth_fit_residual(&self, h: f64) -> Result<f64, SolverError> {
        let Regime::Continue(fb) = self.regime else {
            return Ok(0.0);
        };
        let s = fb.s;
        let v = |x: f64| self.value_at(x);
        let left = (3.0 * v(s)? - 4.0 * v(s - h)? + v(s - 2.0 * h)?) / (2.0 * h);
        let right = (-3.0 * v(s)? + 4.0 * v(s + h)? - v(s + 2.0 * h)?) / (2.0 * h);
        Ok((left - right).abs())
    }
}

/// Stop-at-once when there is no finite threshold or `c = 0`, otherwise the
/// constant control `u*` until `|X| ≤ s`.
pub fn optimal_policy(instance: &ProblemInstance, tr: &ThresholdResult) -> Policy {
    ValueFunction::new(instance, *tr).policy()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViPoint {
    pub x: f64,
    /// k(x) − V(x)
    pub r1: f64,
    /// ½V″σ² + η(μV′) + c
    pub r2: f64,
    pub r3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViReport {
    pub points: Vec<ViPoint>,
    /// Grid points dropped because they fall within the kink neighborhood of ±s.
    pub excluded: usize,
    pub min_r1: f64,
    pub min_r2: f64,
    /// max |r₁r₂| / max(1, |r₁|, |r₂|)
    pub max_complementarity: f64,
    pub max_violation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Evaluates the three variational inequalities at every grid point using
/// the exact piecewise derivatives of V.
pub fn check_variational_inequalities(
    vf: &ValueFunction<'_>,
    grid: &[f64],
    tol: f64,
) -> Result<ViReport, SolverError> {
    let inst = vf.instance();
    let pair = inst.conjugate();
    let c = inst.operating_cost();
    let kink = vf.boundary().map(|fb| fb.s);
    let mut points = Vec::with_capacity(grid.len());
    let mut excluded = 0;
    for &x in grid {
        if let Some(s) = kink {
            if (x.abs() - s).abs() < KINK_EXCLUSION {
                excluded += 1;
                continue;
            }
        }
        let ax = x.abs();
        let r1 = inst.k(x) - vf.value_at(x)?;
        let sig = inst.sigma(x);
        let r2 = 0.5 * vf.second_derivative(x) * sig * sig
            + pair.eta(inst.mu(ax) * vf.derivative(ax))
            + c;
        points.push(ViPoint {
            x,
            r1,
            r2,
            r3: r1 * r2,
        });
    }
    let min_r1 = points.iter().map(|p| p.r1).fold(f64::INFINITY, f64::min);
    let min_r2 = points.iter().map(|p| p.r2).fold(f64::INFINITY, f64::min);
    let max_complementarity = points
        .iter()
        .map(|p| p.r3.abs() / p.r1.abs().max(p.r2.abs()).max(1.0))
        .fold(0.0, f64::max);
    let max_violation = (-min_r1).max(-min_r2).max(max_complementarity).max(0.0);
    let passed =
        !points.is_empty() && min_r1 >= -tol && min_r2 >= -tol && max_complementarity <= tol;
    Ok(ViReport {
        points,
        excluded,
        min_r1,
        min_r2,
        max_complementarity,
        max_violation,
        tol,
        passed,
    })
}

/// A grid of `n` points on `[lo, hi]` (and its mirror image when `symmetric`)
/// with the kink neighborhoods of ±s removed.
pub fn vi_grid(lo: f64, hi: f64, n: usize, s: Option<f64>, symmetric: bool) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64)
        .filter(|x| s.is_none_or(|s| (x.abs() - s).abs() >= KINK_EXCLUSION))
        .collect();
    if symmetric {
        let mirrored: Vec<f64> = out.iter().rev().map(|x| -x).collect();
        out = mirrored.into_iter().chain(out).collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::{geo, logcosh, qc};
    use crate::problem::{
        build_problem, DispersionFamily, DriftFamily, ProblemConfig, RunningCostFamily,
        TerminalCostFamily,
    };

    fn finite(tr: ThresholdResult) -> FreeBoundary {
        *tr.boundary().expect("finite threshold")
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(&qc(1.0), 1.0), -1.0);
        assert!((zeta(&geo(1.0), 1.0) + 2.0).abs() < 1e-15);
        assert!(zeta(&qc(1.0), 1e-9).abs() < 1e-15);
    }

    #[test]
    fn qc_threshold_is_sqrt_c() {
        let fb = finite(solve_threshold(&qc(1.0)).unwrap());
        assert!((fb.s - 1.0).abs() < 1e-12);
        assert!((fb.gamma - 2.0).abs() < 1e-12);
        assert!((fb.b - 1.0).abs() < 1e-12);
        assert!((fb.u_star + 1.0).abs() < 1e-12);
        for c in [0.25, 4.0, 0.01, 100.0] {
            let fb = finite(solve_threshold(&qc(c)).unwrap());
            assert!((fb.s - c.sqrt()).abs() < 1e-10, "c = {c}");
            assert!(fb.residual <= 1e-12 * c.max(1.0));
        }
    }

    #[test]
    fn geo_threshold_matches_quadratic_oracle() {
        // w = 2s² solves w² + 2w − 4 = 0
        let w = -1.0 + 5f64.sqrt();
        let fb = finite(solve_threshold(&geo(1.0)).unwrap());
        assert!((fb.s - (w / 2.0).sqrt()).abs() < 1e-12);
        assert!((fb.s - 0.7861514).abs() < 1e-6);
        assert!((fb.u_star + 0.6180340).abs() < 1e-6);
        assert!(fb.residual <= 1e-12);
    }

    #[test]
    fn logcosh_has_no_threshold() {
        assert_eq!(
            solve_threshold(&logcosh(0.5)).unwrap(),
            ThresholdResult::Infinite
        );
        let inst = logcosh(0.5);
        let vf = ValueFunction::solve(&inst).unwrap();
        assert_eq!(vf.policy(), Policy::StopAtOnce);
        for x in [0.0, 0.4, 3.0, -7.0] {
            assert_eq!(vf.value_at(x).unwrap(), inst.k(x));
        }
        // but a large enough operating cost gives a threshold: zeta > -1/4
        assert!(solve_threshold(&logcosh(0.2)).unwrap().is_finite());
    }

    #[test]
    fn zero_cost_is_rejected_by_threshold_solver() {
        assert!(matches!(
            solve_threshold(&qc(0.0)),
            Err(SolverError::NonPositiveCost(_))
        ));
        let inst = qc(0.0);
        let vf = ValueFunction::solve(&inst).unwrap();
        assert_eq!(*vf.regime(), Regime::ZeroCost);
        assert_eq!(vf.value_at(5.0).unwrap(), 0.0);
        assert_eq!(vf.policy(), Policy::StopAtOnce);
    }

    #[test]
    fn non_monotone_zeta_is_detected() {
        let config = ProblemConfig {
            drift: DriftFamily::Constant { m: 1.0 },
            dispersion: DispersionFamily::Constant { sigma0: 1.0 },
            terminal: TerminalCostFamily::EvenPoly {
                coeffs: vec![0.0, 1.0, -0.1],
            },
            running: RunningCostFamily::Quadratic { beta: 1.0 },
            c: 10.0,
        };
        let inst = ProblemInstance::assemble_unchecked(&config, 0.0);
        assert!(matches!(
            solve_threshold(&inst),
            Err(SolverError::NonMonotone { .. })
        ));
    }

    #[test]
    fn qc_values() {
        let inst = qc(1.0);
        let vf = ValueFunction::solve(&inst).unwrap();
        assert!((vf.value_at(2.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((vf.value_at(-2.0).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(vf.value_at(0.5).unwrap(), 0.25);
        // V(x) = 2√c·x − c above √c
        for c in [0.25, 2.0] {
            let inst = qc(c);
            let vf = ValueFunction::solve(&inst).unwrap();
            assert!((vf.value_at(3.0).unwrap() - (2.0 * c.sqrt() * 3.0 - c)).abs() < 1e-10);
        }
    }

    #[test]
    fn geo_value_matches_log_formula() {
        let inst = geo(1.0);
        let vf = ValueFunction::solve(&inst).unwrap();
        let s2 = (5f64.sqrt() - 1.0) / 2.0;
        let s = s2.sqrt();
        let expected = s2 + 2.0 * s2 * (2.0 / s).ln();
        assert!((vf.value_at(2.0).unwrap() - expected).abs() < 1e-10);
        assert!((expected - 1.7722).abs() < 1e-4);
    }

    #[test]
    fn policies() {
        let inst = qc(1.0);
        let tr = solve_threshold(&inst).unwrap();
        match optimal_policy(&inst, &tr) {
            Policy::ConstantThreshold { u, s } => {
                assert!((u + 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
            }
            p => panic!("unexpected {p:?}"),
        }
        assert_eq!(
            optimal_policy(&inst, &ThresholdResult::Infinite),
            Policy::StopAtOnce
        );
        let zero = qc(0.0);
        assert_eq!(optimal_policy(&zero, &tr), Policy::StopAtOnce);
    }

    #[test]
    fn qc_variational_inequalities() {
        let inst = qc(1.0);
        let vf = ValueFunction::solve(&inst).unwrap();
        let grid = vi_grid(0.01, 5.0, 2001, Some(1.0), true);
        let rep = check_variational_inequalities(&vf, &grid, 1e-8).unwrap();
        assert!(
            rep.passed,
            "{:?}",
            (rep.min_r1, rep.min_r2, rep.max_complementarity)
        );
        // r2 vanishes identically on the continuation region
        let outside = rep.points.iter().filter(|p| p.x > 1.0);
        assert!(outside.clone().all(|p| p.r2.abs() < 1e-12));
        assert!(rep.min_r2.abs() < 1e-12);

        let single = check_variational_inequalities(&vf, &[0.5], 1e-8).unwrap();
        assert_eq!(single.points[0].r1, 0.0);
        assert!((single.points[0].r2 - 1.75).abs() < 1e-14);
    }

    #[test]
    fn stop_at_once_satisfies_inequalities() {
        let inst = logcosh(0.5);
        let vf = ValueFunction::solve(&inst).unwrap();
        let rep = check_variational_inequalities(&vf, &vi_grid(0.0, 10.0, 1001, None, true), 1e-10)
            .unwrap();
        assert!(rep.passed);
        assert!(rep.points.iter().all(|p| p.r1 == 0.0 && p.r2 >= 0.0));
    }

    #[test]
    fn broken_value_function_fails_inequalities() {
        // Using the threshold of c = 1 with an operating cost of 2 breaks r2 outside.
        let inst = qc(2.0);
        let tr = solve_threshold(&qc(1.0)).unwrap();
        let vf = ValueFunction::new(&inst, tr);
        let rep =
            check_variational_inequalities(&vf, &vi_grid(0.01, 5.0, 501, Some(1.0), false), 1e-8)
                .unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn smooth_fit() {
        for inst in [qc(1.0), geo(1.0), geo(3.0)] {
            let vf = ValueFunction::solve(&inst).unwrap();
            assert!(vf.smooth_fit_residual(1e-6).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn verification_chain_reproduces_value() {
        for inst in [qc(1.0), geo(1.0), geo(0.3), qc(4.0)] {
            let vf = ValueFunction::solve(&inst).unwrap();
            let fb = *vf.boundary().unwrap();
            let a = inst.structural_a();
            let rate = (inst.operating_cost() + inst.psi(fb.u_star)) * 2.0 / (a - 2.0 * fb.u_star);
            for x in [fb.s * 1.01, fb.s + 0.5, 2.0 * fb.s + 1.0, 10.0] {
                let chain = fb.b + rate * inst.drift().reciprocal_integral(fb.s, x);
                assert!((chain - vf.value_at(x).unwrap()).abs() < 1e-8, "{x}");
            }
        }
    }

    #[test]
    fn threshold_increases_with_cost() {
        let base = geo(1.0);
        let mut prev = 0.0;
        for i in 1..=20 {
            let c = 0.1 * i as f64;
            let fb = finite(solve_threshold(&base.with_operating_cost(c)).unwrap());
            assert!(fb.s > prev);
            assert!(fb.gamma > 0.0 && fb.u_star < 0.0);
            prev = fb.s;
        }
    }

    #[test]
    fn quartic_running_cost_threshold() {
        let inst = build_problem(&ProblemConfig {
            drift: DriftFamily::Constant { m: 1.0 },
            dispersion: DispersionFamily::Constant { sigma0: 1.0 },
            terminal: TerminalCostFamily::Quadratic { kappa: 1.0 },
            running: RunningCostFamily::EvenPower { beta: 1.0, p: 4.0 },
            c: 3.0,
        })
        .unwrap();
        // η(w) = −(3/4)·(w/4)^{1/3}·w for p = 4; with w = 2s: −(3/4)(2s)^{4/3}/4^{1/3} = −3
        let fb = finite(solve_threshold(&inst).unwrap());
        let w = 2.0 * fb.s;
        let eta = -0.75 * w * (w / 4.0).cbrt();
        assert!((eta + 3.0).abs() < 1e-12);
        assert!((fb.u_star + (w / 4.0).cbrt()).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn value_never_exceeds_terminal_cost(x in -20.0f64..20.0, c in 0.05f64..5.0) {
            for inst in [qc(c), geo(c)] {
                let vf = ValueFunction::solve(&inst).unwrap();
                let s = vf.boundary().unwrap().s;
                let v = vf.value_at(x).unwrap();
                proptest::prop_assert!(v <= inst.k(x) + 1e-12);
                if x.abs() <= s {
                    proptest::prop_assert_eq!(v, inst.k(x));
                }
                proptest::prop_assert_eq!(v, vf.value_at(-x).unwrap());
            }
        }
    }
}
