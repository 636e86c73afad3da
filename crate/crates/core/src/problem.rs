//! Problem instances: drift, dispersion, terminal cost, running cost and the
//! operating cost per unit time.
//!
//! Coefficients come from closed parametric families so every derivative the
//! solver needs (μ′, k′, k″, ψ′) is exact. The structural coefficient `A` of
//! the relation `μ′σ² = Aμ²` is never supplied by the user; it is inferred
//! from the drift/dispersion pair and rejected when no constant fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::ConjugatePair;

/// Relative tolerance used when inferring `A` and checking the drift relation.
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_GRID_LO: f64 = 1e-3;
pub const DEFAULT_GRID_HI: f64 = 1e2;
pub const DEFAULT_GRID_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("assumption grid must be nonempty, strictly positive and sorted")]
    InvalidGrid,
    #[error("no constant A satisfies mu'(x) sigma^2(x) = A mu^2(x): ratio spread {spread:.3e} exceeds {tol:.1e}")]
    InconsistentDrift { spread: f64, tol: f64 },
}

/// Evaluates `|x|^e` with fast paths for the integer exponents that dominate
/// Monte Carlo inner loops.
#[inline]
fn pow_abs(x: f64, e: f64) -> f64 {
    let ax = x.abs();
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        ax
    } else if e == 2.0 {
        ax * ax
    } else if e.fract() == 0.0 && e.abs() <= 32.0 {
        ax.powi(e as i32)
    } else {
        ax.powf(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftFamily {
    /// μ(x) = m
    Constant { m: f64 },
    /// μ(x) = scale·|x|^a
    Power { a: f64, scale: f64 },
}

impl DriftFamily {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            DriftFamily::Constant { m } => m,
            DriftFamily::Power { a, scale } => scale * pow_abs(x, a),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            DriftFamily::Constant { .. } => 0.0,
            DriftFamily::Power { a, scale } => scale * a * pow_abs(x, a - 1.0) * x.signum(),
        }
    }

    /// Closed-form `∫_lo^hi dy/μ(y)` for `0 < lo`, `0 < hi`.
    pub fn reciprocal_integral(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            DriftFamily::Constant { m } => (hi - lo) / m,
            DriftFamily::Power { a, scale } => {
                let log_ratio = (hi / lo).ln();
                if a == 1.0 {
                    log_ratio / scale
                } else {
                    // lo^{1-a} (exp((1-a) ln(hi/lo)) - 1) / (1-a), stable near a = 1
                    let e = 1.0 - a;
                    lo.powf(e) * (e * log_ratio).exp_m1() / (e * scale)
                }
            }
        }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        match *self {
            DriftFamily::Constant { m } if !(m.is_finite() && m > 0.0) => Err(
                ProblemError::OutOfRange(format!("constant drift m = {m} must be positive")),
            ),
            DriftFamily::Power { a, .. } if !(a.is_finite() && a >= 1.0) => Err(
                ProblemError::OutOfRange(format!("power drift exponent a = {a} must be >= 1")),
            ),
            DriftFamily::Power { scale, .. } if !(scale.is_finite() && scale > 0.0) => Err(
                ProblemError::OutOfRange(format!("power drift scale = {scale} must be positive")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispersionFamily {
    /// σ(x) = sigma0
    Constant { sigma0: f64 },
    /// σ(x) = scale·|x|^b
    Power { b: f64, scale: f64 },
}

impl DispersionFamily {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            DispersionFamily::Constant { sigma0 } => sigma0,
            DispersionFamily::Power { b, scale } => scale * pow_abs(x, b),
        }
    }

    /// The constant value when σ does not depend on x.
    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            DispersionFamily::Constant { sigma0 } => Some(sigma0),
            DispersionFamily::Power { b, scale } if b == 0.0 => Some(scale),
            DispersionFamily::Power { .. } => None,
        }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        match *self {
            DispersionFamily::Constant { sigma0 } if !(sigma0.is_finite() && sigma0 > 0.0) => Err(
                ProblemError::OutOfRange(format!("constant dispersion sigma0 = {sigma0} must be positive")),
            ),
            DispersionFamily::Power { b, scale } if !(b.is_finite() && scale.is_finite() && scale > 0.0) => {
                Err(ProblemError::OutOfRange(format!(
                    "power dispersion needs finite b and positive scale, got b = {b}, scale = {scale}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCostFamily {
    /// k(x) = κx²
    Quadratic { kappa: f64 },
    /// k(x) = κ·log cosh x
    LogCosh { kappa: f64 },
    /// k(x) = Σ_j coeffs[j]·x^{2j}
    EvenPoly { coeffs: Vec<f64> },
}

fn log_cosh(x: f64) -> f64 {
    let ax = x.abs();
    ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2
}

fn sech_squared(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let s = 2.0 * e / (1.0 + e * e);
    s * s
}

impl TerminalCostFamily {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            TerminalCostFamily::Quadratic { kappa } => kappa * x * x,
            TerminalCostFamily::LogCosh { kappa } => kappa * log_cosh(x),
            TerminalCostFamily::EvenPoly { coeffs } => {
                let x2 = x * x;
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * x2 + c)
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            TerminalCostFamily::Quadratic { kappa } => 2.0 * kappa * x,
            TerminalCostFamily::LogCosh { kappa } => kappa * x.tanh(),
            TerminalCostFamily::EvenPoly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &c)| 2.0 * j as f64 * c * x.powi(2 * j as i32 - 1))
                .sum(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            TerminalCostFamily::Quadratic { kappa } => 2.0 * kappa,
            TerminalCostFamily::LogCosh { kappa } => kappa * sech_squared(x),
            TerminalCostFamily::EvenPoly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &c)| {
                    let n = 2 * j;
                    (n * (n - 1)) as f64 * c * x.powi(n as i32 - 2)
                })
                .sum(),
        }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        match self {
            TerminalCostFamily::Quadratic { kappa } | TerminalCostFamily::LogCosh { kappa }
                if !(kappa.is_finite() && *kappa > 0.0) =>
            {
                Err(ProblemError::OutOfRange(format!(
                    "terminal cost kappa = {kappa} must be positive"
                )))
            }
            TerminalCostFamily::EvenPoly { coeffs } => {
                if coeffs.len() < 2 {
                    return Err(ProblemError::OutOfRange(
                        "even polynomial needs degree >= 2 (at least two coefficients)".into(),
                    ));
                }
                if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    return Err(ProblemError::OutOfRange(format!(
                        "even polynomial coefficients must be finite and >= 0, got {coeffs:?}"
                    )));
                }
                if coeffs[1..].iter().all(|&c| c == 0.0) {
                    return Err(ProblemError::OutOfRange(
                        "even polynomial needs a positive coefficient of degree >= 2".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunningCostFamily {
    /// ψ(u) = βu²
    Quadratic { beta: f64 },
    /// ψ(u) = β|u|^p
    EvenPower { beta: f64, p: f64 },
}

impl RunningCostFamily {
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            RunningCostFamily::Quadratic { beta } => beta * u * u,
            RunningCostFamily::EvenPower { beta, p } => beta * pow_abs(u, p),
        }
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            RunningCostFamily::Quadratic { beta } => 2.0 * beta * u,
            RunningCostFamily::EvenPower { beta, p } => beta * p * pow_abs(u, p - 1.0) * u.signum(),
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        match *self {
            RunningCostFamily::Quadratic { beta } => 2.0 * beta,
            RunningCostFamily::EvenPower { beta, p } => beta * p * (p - 1.0) * pow_abs(u, p - 2.0),
        }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        match *self {
            RunningCostFamily::Quadratic { beta } | RunningCostFamily::EvenPower { beta, .. }
                if !(beta.is_finite() && beta > 0.0) =>
            {
                Err(ProblemError::OutOfRange(format!(
                    "running cost beta = {beta} must be positive"
                )))
            }
            RunningCostFamily::EvenPower { p, .. } if !(p.is_finite() && p >= 2.0) => Err(
                ProblemError::OutOfRange(format!("running cost exponent p = {p} must be >= 2")),
            ),
            _ => Ok(()),
        }
    }
}

/// Serialized description of a problem; see [`build_problem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub drift: DriftFamily,
    pub dispersion: DispersionFamily,
    pub terminal: TerminalCostFamily,
    pub running: RunningCostFamily,
    /// Operating cost per unit time.
    pub c: f64,
}

/// A fully specified, immutable problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    drift: DriftFamily,
    dispersion: DispersionFamily,
    terminal: TerminalCostFamily,
    running: RunningCostFamily,
    c: f64,
    a_coef: f64,
}

/// Validates a config and infers `A` on the default assumption grid.
pub fn build_problem(config: &ProblemConfig) -> Result<ProblemInstance, ProblemError> {
    config.drift.validate()?;
    config.dispersion.validate()?;
    config.terminal.validate()?;
    config.running.validate()?;
    if !(config.c.is_finite() && config.c >= 0.0) {
        return Err(ProblemError::OutOfRange(format!(
            "operating cost c = {} must be >= 0",
            config.c
        )));
    }
    let grid = default_grid();
    let a_coef = infer_a(&config.drift, &config.dispersion, &grid)?;
    Ok(ProblemInstance::from_parts(config, a_coef))
}

impl ProblemInstance {
    fn from_parts(config: &ProblemConfig, a_coef: f64) -> Self {
        Self {
            drift: config.drift,
            dispersion: config.dispersion,
            terminal: config.terminal.clone(),
            running: config.running,
            c: config.c,
            a_coef,
        }
    }

    /// Assembles an instance without range checks and with a caller-chosen
    /// `A`. Only meant for diagnostics such as feeding a deliberately broken
    /// instance to [`verify_assumptions`]; solvers assume validated input.
    pub fn assemble_unchecked(config: &ProblemConfig, a_coef: f64) -> Self {
        Self::from_parts(config, a_coef)
    }

    pub fn config(&self) -> ProblemConfig {
        ProblemConfig {
            drift: self.drift,
            dispersion: self.dispersion,
            terminal: self.terminal.clone(),
            running: self.running,
            c: self.c,
        }
    }

    /// Same instance with a different operating cost.
    pub fn with_operating_cost(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    pub fn drift(&self) -> &DriftFamily {
        &self.drift
    }

    pub fn dispersion(&self) -> &DispersionFamily {
        &self.dispersion
    }

    pub fn terminal(&self) -> &TerminalCostFamily {
        &self.terminal
    }

    pub fn running(&self) -> &RunningCostFamily {
        &self.running
    }

    pub fn operating_cost(&self) -> f64 {
        self.c
    }

    /// The structural coefficient `A` in `μ′σ² = Aμ²`.
    pub fn structural_a(&self) -> f64 {
        self.a_coef
    }

    pub fn conjugate(&self) -> ConjugatePair {
        ConjugatePair::new(self.running)
    }

    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        self.drift.value(x)
    }

    #[inline]
    pub fn mu_prime(&self, x: f64) -> f64 {
        self.drift.derivative(x)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.dispersion.value(x)
    }

    pub fn k(&self, x: f64) -> f64 {
        self.terminal.value(x)
    }

    pub fn k_prime(&self, x: f64) -> f64 {
        self.terminal.derivative(x)
    }

    pub fn k_second(&self, x: f64) -> f64 {
        self.terminal.second_derivative(x)
    }

    #[inline]
    pub fn psi(&self, u: f64) -> f64 {
        self.running.value(u)
    }

    pub fn psi_prime(&self, u: f64) -> f64 {
        self.running.derivative(u)
    }
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(
        lo > 0.0 && hi > lo && n >= 2,
        "log_grid needs 0 < lo < hi and n >= 2"
    );
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_GRID_LO, DEFAULT_GRID_HI, DEFAULT_GRID_POINTS)
}

fn check_grid(grid: &[f64]) -> Result<(), ProblemError> {
    let ok = !grid.is_empty()
        && grid.iter().all(|x| x.is_finite() && *x > 0.0)
        && grid.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(ProblemError::InvalidGrid)
    }
}

/// Infers `A` as the median of `μ′σ²/μ²` over the grid and rejects the pair
/// when the ratio's relative spread exceeds [`DEFAULT_TOL`].
pub fn infer_a(
    drift: &DriftFamily,
    dispersion: &DispersionFamily,
    grid: &[f64],
) -> Result<f64, ProblemError> {
    check_grid(grid)?;
    let mut ratios: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let mu = drift.value(x);
            let s = dispersion.value(x);
            drift.derivative(x) * s * s / (mu * mu)
        })
        .collect();
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(ProblemError::InconsistentDrift {
            spread: f64::INFINITY,
            tol: DEFAULT_TOL,
        });
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    let median = if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    };
    let spread = (ratios[n - 1] - ratios[0]) / median.abs().max(1.0);
    if spread > DEFAULT_TOL || median < 0.0 {
        return Err(ProblemError::InconsistentDrift {
            spread,
            tol: DEFAULT_TOL,
        });
    }
    Ok(median)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
    /// Super-quadratic running cost, only relevant to variance control.
    A8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub passed: bool,
    pub worst_residual: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_len: usize,
    /// sup |k′| over the grid.
    pub terminal_slope_sup: f64,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, a: Assumption) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.assumption == a)
    }

    pub fn first_failure(&self) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Relative mismatch between an exact derivative and a central difference of
/// the function it differentiates.
fn derivative_mismatch(f: impl Fn(f64) -> f64, exact: f64, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1.0);
    let fd = (f(x + h) - f(x - h)) / (2.0 * h);
    (fd - exact).abs() / exact.abs().max(1.0)
}

const FD_TOL: f64 = 1e-4;

fn finite_max(values: impl Iterator<Item = f64>) -> f64 {
    values.filter(|v| v.is_finite()).fold(0.0, f64::max)
}

/// Checks the standing assumptions on a grid of positive abscissae.
/// Failures are recorded in the report, never raised.
pub fn verify_assumptions(instance: &ProblemInstance, grid: &[f64], tol: f64) -> AssumptionReport {
    let grid: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > 0.0)
        .collect();
    let mut checks = Vec::with_capacity(8);
    let a = instance.structural_a();

    // A1
    {
        let even = finite_max(
            grid.iter()
                .map(|&x| (instance.mu(x) - instance.mu(-x)).abs()),
        );
        let fd = finite_max(
            grid.iter()
                .map(|&x| derivative_mismatch(|y| instance.mu(y), instance.mu_prime(x), x)),
        );
        let positive = grid
            .iter()
            .all(|&x| instance.mu(x) > 0.0 && instance.mu(x).is_finite());
        let nondecreasing = grid.iter().all(|&x| instance.mu_prime(x) >= 0.0);
        let passed = positive && nondecreasing && even == 0.0 && fd <= FD_TOL;
        checks.push(AssumptionCheck {
            assumption: Assumption::A1,
            passed,
            worst_residual: even.max(fd),
            detail: format!(
                "mu even (max |mu(x)-mu(-x)| = {even:.2e}), positive: {positive}, mu' >= 0: {nondecreasing}, derivative mismatch {fd:.2e}"
            ),
        });
    }

    // A2
    {
        let even = finite_max(
            grid.iter()
                .map(|&x| (instance.sigma(x) - instance.sigma(-x)).abs()),
        );
        let mut suffix_inf = f64::INFINITY;
        let mut bounded_below = true;
        for &x in grid.iter().rev() {
            suffix_inf = suffix_inf.min(instance.sigma(x));
            if !(suffix_inf > 0.0) {
                bounded_below = false;
            }
        }
        let tail_ok = match instance.dispersion() {
            DispersionFamily::Constant { .. } => true,
            DispersionFamily::Power { b, .. } => *b >= 0.0,
        };
        let passed = even == 0.0 && bounded_below && tail_ok;
        checks.push(AssumptionCheck {
            assumption: Assumption::A2,
            passed,
            worst_residual: even,
            detail: format!(
                "sigma even (residual {even:.2e}), inf over grid tails > 0: {bounded_below}, no decay at infinity: {tail_ok}"
            ),
        });
    }

    // A3: constant controls with continuous coefficients are locally integrable.
    {
        let finite = grid
            .iter()
            .all(|&x| instance.mu(x).is_finite() && instance.sigma(x).is_finite());
        checks.push(AssumptionCheck {
            assumption: Assumption::A3,
            passed: finite,
            worst_residual: 0.0,
            detail: format!("mu and sigma finite on grid: {finite}"),
        });
    }

    // A4
    {
        let worst = grid
            .iter()
            .map(|&x| {
                let mu = instance.mu(x);
                let s = instance.sigma(x);
                (instance.mu_prime(x) * s * s - a * mu * mu).abs() / (mu * mu).max(1.0)
            })
            .fold(
                0.0,
                |m: f64, r| if r.is_nan() { f64::INFINITY } else { m.max(r) },
            );
        let passed = a >= 0.0 && worst <= tol;
        checks.push(AssumptionCheck {
            assumption: Assumption::A4,
            passed,
            worst_residual: if worst.is_finite() { worst } else { f64::MAX },
            detail: format!("A = {a}, max |mu' sigma^2 - A mu^2| / max(1, mu^2) = {worst:.3e}"),
        });
    }

    // A5
    {
        let (passed, detail, worst) = if a == 0.0 {
            let bounded = instance.dispersion().constant_value().is_some();
            let sup = finite_max(grid.iter().map(|&x| instance.sigma(x)));
            (
                bounded,
                format!("A = 0: sigma bounded: {bounded} (grid sup {sup:.3e})"),
                0.0,
            )
        } else {
            let inf = grid
                .iter()
                .map(|&x| instance.mu_prime(x))
                .fold(f64::INFINITY, f64::min);
            (
                inf > 0.0,
                format!("A > 0: inf of mu' over grid = {inf:.3e}"),
                0.0,
            )
        };
        checks.push(AssumptionCheck {
            assumption: Assumption::A5,
            passed,
            worst_residual: worst,
            detail,
        });
    }

    // A6
    {
        let k_even = finite_max(grid.iter().map(|&x| (instance.k(x) - instance.k(-x)).abs()));
        let psi_even = finite_max(
            grid.iter()
                .map(|&x| (instance.psi(x) - instance.psi(-x)).abs()),
        );
        let k_nonneg = grid.iter().all(|&x| instance.k(x) >= 0.0) && instance.k(0.0) >= 0.0;
        let psi_nonneg = grid.iter().all(|&x| instance.psi(x) >= 0.0);
        let k2_min = grid
            .iter()
            .map(|&x| instance.k_second(x))
            .fold(f64::INFINITY, f64::min);
        let psi2_min = grid
            .iter()
            .map(|&x| instance.running().second_derivative(x))
            .fold(f64::INFINITY, f64::min);
        let k_fd = finite_max(grid.iter().flat_map(|&x| {
            [
                derivative_mismatch(|y| instance.k(y), instance.k_prime(x), x),
                derivative_mismatch(|y| instance.k_prime(y), instance.k_second(x), x),
            ]
        }));
        let psi_fd = finite_max(grid.iter().flat_map(|&x| {
            [
                derivative_mismatch(|y| instance.psi(y), instance.psi_prime(x), x),
                derivative_mismatch(
                    |y| instance.psi_prime(y),
                    instance.running().second_derivative(x),
                    x,
                ),
            ]
        }));
        let psi_zero = instance.psi(0.0);
        let passed = k_even == 0.0
            && psi_even == 0.0
            && k_nonneg
            && psi_nonneg
            && k2_min > 0.0
            && psi2_min > 0.0
            && k_fd <= FD_TOL
            && psi_fd <= FD_TOL
            && psi_zero == 0.0;
        checks.push(AssumptionCheck {
            assumption: Assumption::A6,
            passed,
            worst_residual: k_even.max(psi_even).max(k_fd).max(psi_fd),
            detail: format!(
                "k: even, min k'' = {k2_min:.3e}, nonneg: {k_nonneg}; psi: even, min psi'' = {psi2_min:.3e}, psi(0) = {psi_zero}; derivative mismatch k {k_fd:.2e}, psi {psi_fd:.2e}"
            ),
        });
    }

    // A7
    {
        let increasing = grid
            .windows(2)
            .all(|w| instance.psi_prime(w[1]) > instance.psi_prime(w[0]));
        let top = grid.last().copied().unwrap_or(1.0);
        let growth = instance.psi_prime(top) / instance.psi_prime(1.0);
        let passed = increasing && growth >= 10.0;
        checks.push(AssumptionCheck {
            assumption: Assumption::A7,
            passed,
            worst_residual: 0.0,
            detail: format!(
                "psi' increasing: {increasing}, psi'({top}) / psi'(1) = {growth:.3e} (need >= 10)"
            ),
        });
    }

    // A8 (informational for drift control)
    {
        let top = grid.last().copied().unwrap_or(1.0);
        let ratio = instance.psi(top) / (top * top);
        checks.push(AssumptionCheck {
            assumption: Assumption::A8,
            passed: ratio > 0.0,
            worst_residual: 0.0,
            detail: format!("psi(x)/x^2 at x = {top}: {ratio:.3e}"),
        });
    }

    let terminal_slope_sup = finite_max(grid.iter().map(|&x| instance.k_prime(x).abs()));
    AssumptionReport {
        checks,
        grid_min: grid.first().copied().unwrap_or(f64::NAN),
        grid_max: grid.last().copied().unwrap_or(f64::NAN),
        grid_len: grid.len(),
        terminal_slope_sup,
    }
}
