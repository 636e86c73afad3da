//! One-sided hitting times of `dX = uμ(X)dt + σ(X)dW` with a constant
//! control `u < 0`.
//!
//! [`expected_hitting_time`] is the closed form `(2/(A − 2u))·∫_s^x dy/μ(y)`.
//! [`expected_hitting_time_oracle`] evaluates the general scale/speed
//! representation
//!
//! ```text
//! E[τ] = −∫_s^x (p(x) − p(y)) m(dy) + (p(x) − p(s))·m((s, ∞))
//! ```
//!
//! by quadrature and exists only to check the closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{DriftFamily, ProblemInstance};
use crate::quadrature::{self, QuadratureError};

/// Truncation point for speed-measure tails without a closed form.
pub const TAIL_CUTOFF: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HittingError {
    #[error("hitting-time formulas need a negative control, got u = {0}")]
    NonNegativeControl(f64),
    #[error("need 0 < s <= x, got s = {s}, x = {x}")]
    InvalidLevels { s: f64, x: f64 },
    #[error("reference point d = {d} must exceed s = {s}")]
    InvalidReference { s: f64, d: f64 },
    #[error("speed measure tail decays too slowly: density * x = {tail:.3e} at the cutoff")]
    DivergentTail { tail: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

fn check_control(u: f64) -> Result<(), HittingError> {
    if u < 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(HittingError::NonNegativeControl(u))
    }
}

fn check_levels(s: f64, x: f64) -> Result<(), HittingError> {
    if s > 0.0 && x >= s && x.is_finite() {
        Ok(())
    } else {
        Err(HittingError::InvalidLevels { s, x })
    }
}

/// Closed-form expected time for the controlled diffusion started at `x` to
/// reach `s`.
pub fn expected_hitting_time(
    instance: &ProblemInstance,
    u: f64,
    s: f64,
    x: f64,
) -> Result<f64, HittingError> {
    check_control(u)?;
    check_levels(s, x)?;
    if x == s {
        return Ok(0.0);
    }
    Ok(2.0 / (instance.structural_a() - 2.0 * u) * instance.drift().reciprocal_integral(s, x))
}

/// Scale function of the diffusion on `[s, ∞)`, normalized by `p(d) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ScaleSpec<'a> {
    instance: &'a ProblemInstance,
    u: f64,
    s: f64,
    d: f64,
}

impl<'a> ScaleSpec<'a> {
    pub fn new(
        instance: &'a ProblemInstance,
        u: f64,
        s: f64,
        d: f64,
    ) -> Result<Self, HittingError> {
        check_control(u)?;
        check_levels(s, s)?;
        if !(d > s && d.is_finite()) {
            return Err(HittingError::InvalidReference { s, d });
        }
        Ok(Self { instance, u, s, d })
    }

    /// Reference point `d = s + 1`.
    pub fn with_default_reference(
        instance: &'a ProblemInstance,
        u: f64,
        s: f64,
    ) -> Result<Self, HittingError> {
        Self::new(instance, u, s, s + 1.0)
    }

    pub fn threshold(&self) -> f64 {
        self.s
    }

    pub fn reference(&self) -> f64 {
        self.d
    }

    pub fn speed(&self) -> SpeedSpec<'a> {
        SpeedSpec { scale: *self }
    }

    /// `∫_d^x μ(ζ)/σ²(ζ) dζ` by adaptive quadrature.
    fn drift_to_variance_integral(&self, x: f64) -> Result<f64, HittingError> {
        let inst = self.instance;
        let f = |z: f64| {
            let sg = inst.sigma(z);
            inst.mu(z) / (sg * sg)
        };
        let scale = (f(x).abs() + f(self.d).abs()) * (x - self.d).abs();
        Ok(quadrature::integrate(
            f,
            self.d,
            x,
            1e-14 * scale.max(1e-300),
        )?)
    }

    /// p′(x), in closed form where the coefficient families allow it.
    pub fn density(&self, x: f64) -> f64 {
        let inst = self.instance;
        let a = inst.structural_a();
        match (inst.drift(), inst.dispersion().constant_value()) {
            (DriftFamily::Constant { m }, Some(sigma0)) => {
                (-2.0 * self.u * m * (x - self.d) / (sigma0 * sigma0)).exp()
            }
            _ if a > 0.0 => (-2.0 * self.u / a * (inst.mu(x) / inst.mu(self.d)).ln()).exp(),
            _ => self.density_quadrature(x).unwrap_or(f64::NAN),
        }
    }

    /// p′(x) = exp(−2u ∫_d^x μ/σ²) with the inner integral done numerically.
    pub fn density_quadrature(&self, x: f64) -> Result<f64, HittingError> {
        Ok((-2.0 * self.u * self.drift_to_variance_integral(x)?).exp())
    }

    /// p(x) = ∫_d^x p′(ξ) dξ.
    ///
    /// Returns `+∞` when p′ overflows on `[d, x]`: the integral of a positive
    /// function past the floating-point range.
    pub fn value(&self, x: f64) -> Result<f64, HittingError> {
        if x == self.d {
            return Ok(0.0);
        }
        let scale = (self.density(x) + self.density(self.d)) * (x - self.d).abs();
        if !scale.is_finite() && x > self.d {
            return Ok(f64::INFINITY);
        }
        match quadrature::integrate(|z| self.density(z), self.d, x, 1e-14 * scale) {
            Err(QuadratureError::NonFinite { .. }) if x > self.d => Ok(f64::INFINITY),
            other => Ok(other?),
        }
    }
}

/// Speed measure `m(dx) = 2dx / (p′(x)σ²(x))` attached to a scale function.
#[derive(Debug, Clone, Copy)]
pub struct SpeedSpec<'a> {
    scale: ScaleSpec<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub value: f64,
    /// Bound on the neglected tail beyond [`TAIL_CUTOFF`]; zero for closed forms.
    pub tail_bound: f64,
    pub closed_form: bool,
}

impl<'a> SpeedSpec<'a> {
    pub fn density(&self, x: f64) -> f64 {
        let sg = self.scale.instance.sigma(x);
        2.0 / (self.scale.density(x) * sg * sg)
    }

    /// `m((a, b))` for finite `b`.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64, HittingError> {
        if a == b {
            return Ok(0.0);
        }
        let scale = (self.density(a) + self.density(b)) * (b - a).abs();
        Ok(quadrature::integrate(
            |y| self.density(y),
            a,
            b,
            1e-14 * scale.max(1e-300),
        )?)
    }

    /// `m((a, ∞))`, in closed form when available.
    pub fn tail_mass(&self, a: f64) -> Result<MassEstimate, HittingError> {
        let sc = &self.scale;
        let inst = sc.instance;
        let (u, d) = (sc.u, sc.d);
        let a_coef = inst.structural_a();
        match (inst.drift(), inst.dispersion().constant_value()) {
            (DriftFamily::Constant { m }, Some(sigma0)) => Ok(MassEstimate {
                value: -(1.0 / (u * m)) * (2.0 * u * m * (a - d) / (sigma0 * sigma0)).exp(),
                tail_bound: 0.0,
                closed_form: true,
            }),
            _ if a_coef > 0.0 => {
                let ratio = inst.mu(a) / inst.mu(d);
                let value = -(2.0 / (2.0 * u - a_coef)) / inst.mu(a)
                    * (2.0 * u / a_coef * ratio.ln()).exp();
                Ok(MassEstimate {
                    value,
                    tail_bound: 0.0,
                    closed_form: true,
                })
            }
            _ => self.tail_mass_quadrature(a),
        }
    }

    /// `m((a, TAIL_CUTOFF))` over geometrically growing panels, with the
    /// density at the cutoff times the cutoff as the reported tail bound.
    pub fn tail_mass_quadrature(&self, a: f64) -> Result<MassEstimate, HittingError> {
        let mut lo = a;
        let mut width = 1.0f64;
        let mut total = 0.0;
        while lo < TAIL_CUTOFF {
            let hi = (lo + width).min(TAIL_CUTOFF);
            total += self.mass(lo, hi)?;
            lo = hi;
            width *= 2.0;
        }
        let tail = self.density(TAIL_CUTOFF) * TAIL_CUTOFF;
        if !(tail <= 1e-8 * total.max(1e-300)) {
            return Err(HittingError::DivergentTail { tail });
        }
        Ok(MassEstimate {
            value: total,
            tail_bound: tail,
            closed_form: false,
        })
    }
}

/// Scale/speed representation of `E[τ]`, evaluated by nested quadrature.
///
/// Splitting `m((s, ∞))` at `x` turns the formula into the sum of two
/// nonnegative terms,
///
/// ```text
/// E[τ] = ∫_s^x (p(y) − p(s)) m(dy) + (p(x) − p(s))·m((x, ∞)),
/// ```
///
/// which avoids cancelling two large numbers when p′ varies over many
/// orders of magnitude on `[s, x]`.
pub fn expected_hitting_time_oracle(
    instance: &ProblemInstance,
    u: f64,
    s: f64,
    x: f64,
    d: f64,
) -> Result<f64, HittingError> {
    check_levels(s, x)?;
    let scale = ScaleSpec::new(instance, u, s, d)?;
    let speed = scale.speed();
    if x == s {
        return Ok(0.0);
    }
    // p′ is increasing for u < 0, so p′(y)·(y − s) bounds p(y) − p(s)
    let rise = |y: f64| {
        quadrature::integrate(
            |z| scale.density(z),
            s,
            y,
            1e-15 * scale.density(y) * (y - s),
        )
    };
    let inner_err = std::cell::Cell::new(None);
    let integrand = |y: f64| match rise(y) {
        Ok(v) => v * speed.density(y),
        Err(e) => {
            inner_err.set(Some(e));
            f64::NAN
        }
    };
    let rough = quadrature::integrate(
        &integrand,
        s,
        x,
        1e-6 * (x - s) * integrand(x).max(integrand(0.5 * (s + x))),
    );
    let near = match rough {
        Ok(r) => quadrature::integrate(&integrand, s, x, 1e-13 * r.max(f64::MIN_POSITIVE)),
        Err(e) => Err(e),
    };
    if let Some(e) = inner_err.into_inner() {
        return Err(e.into());
    }
    let far = rise(x)? * speed.tail_mass(x)?.value;
    Ok(near? + far)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::{geo, qc};
    use crate::problem::{
        build_problem, DispersionFamily, DriftFamily, ProblemConfig, RunningCostFamily,
        TerminalCostFamily,
    };

    fn power2() -> ProblemInstance {
        build_problem(&ProblemConfig {
            drift: DriftFamily::Power { a: 2.0, scale: 1.0 },
            dispersion: DispersionFamily::Power { b: 1.5, scale: 1.0 },
            terminal: TerminalCostFamily::Quadratic { kappa: 1.0 },
            running: RunningCostFamily::Quadratic { beta: 1.0 },
            c: 1.0,
        })
        .unwrap()
    }

    fn slow_constant() -> ProblemInstance {
        build_problem(&ProblemConfig {
            drift: DriftFamily::Constant { m: 2.0 },
            dispersion: DispersionFamily::Constant { sigma0: 0.5 },
            terminal: TerminalCostFamily::Quadratic { kappa: 1.0 },
            running: RunningCostFamily::Quadratic { beta: 1.0 },
            c: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(
            expected_hitting_time(&qc(1.0), -1.0, 1.0, 1.0).unwrap(),
            0.0
        );
        assert!((expected_hitting_time(&qc(1.0), -1.0, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        let s = ((5f64.sqrt() - 1.0) / 2.0).sqrt();
        let u = -(5f64.sqrt() - 1.0) / 2.0;
        let e = expected_hitting_time(&geo(1.0), u, s, 2.0).unwrap();
        assert!((e - 2.0 / (1.0 - 2.0 * u) * (2.0 / s).ln()).abs() < 1e-14);
        assert!((e - 0.8352).abs() < 1e-4);
    }

    #[test]
    fn invalid_inputs() {
        let inst = qc(1.0);
        assert!(matches!(
            expected_hitting_time(&inst, 0.0, 1.0, 2.0),
            Err(HittingError::NonNegativeControl(_))
        ));
        assert!(matches!(
            expected_hitting_time(&inst, 0.5, 1.0, 2.0),
            Err(HittingError::NonNegativeControl(_))
        ));
        assert!(matches!(
            expected_hitting_time(&inst, -1.0, 2.0, 1.0),
            Err(HittingError::InvalidLevels { .. })
        ));
        assert!(matches!(
            ScaleSpec::new(&inst, -1.0, 1.0, 0.5),
            Err(HittingError::InvalidReference { .. })
        ));
    }

    #[test]
    fn scale_density_examples() {
        let inst = qc(1.0);
        let sc = ScaleSpec::new(&inst, -1.0, 1.0, 2.0).unwrap();
        assert_eq!(sc.value(2.0).unwrap(), 0.0);
        for x in [1.0, 1.5, 2.0, 3.7] {
            assert!((sc.density(x) - (2.0 * (x - 2.0)).exp()).abs() < 1e-14 * sc.density(x));
        }
        let g = geo(1.0);
        let sc = ScaleSpec::new(&g, -1.0, 0.5, 2.0).unwrap();
        for x in [0.5, 1.0, 2.0, 3.7] {
            assert!((sc.density(x) - (x / 2.0).powi(2)).abs() < 1e-14 * sc.density(x).max(1.0));
        }
    }

    #[test]
    fn closed_form_density_matches_nested_quadrature() {
        for inst in [qc(1.0), geo(1.0), power2(), slow_constant()] {
            let sc = ScaleSpec::new(&inst, -0.8, 0.6, 1.9).unwrap();
            for x in [0.6, 1.0, 1.9, 2.5, 4.0] {
                let closed = sc.density(x);
                let numeric = sc.density_quadrature(x).unwrap();
                assert!(
                    (closed - numeric).abs() <= 1e-12 * closed.max(1.0),
                    "{inst:?} x={x}"
                );
            }
        }
    }

    #[test]
    fn speed_mass_examples() {
        let inst = qc(1.0);
        let sp = ScaleSpec::new(&inst, -1.0, 1.0, 2.0).unwrap().speed();
        assert_eq!(sp.mass(1.3, 1.3).unwrap(), 0.0);
        // ∫_1^∞ 2e^{−2(x−2)} dx = e²
        let tail = sp.tail_mass(1.0).unwrap();
        assert!(tail.closed_form);
        assert!((tail.value - 1f64.exp().powi(2)).abs() < 1e-13);
        let numeric = sp.tail_mass_quadrature(1.0).unwrap();
        assert!((numeric.value - tail.value).abs() < 1e-9 * tail.value);

        let g = geo(1.0);
        let s = 0.7;
        let sp = ScaleSpec::new(&g, -1.0, s, 2.0).unwrap().speed();
        let tail = sp.tail_mass(s).unwrap();
        assert!((tail.value - (2.0 / 3.0) * 4.0 / s.powi(3)).abs() < 1e-12);
        let partial = sp.mass(s, 50.0).unwrap() + sp.mass(50.0, 1e4).unwrap();
        assert!((partial - tail.value).abs() < 1e-9 * tail.value);
    }

    #[test]
    fn divergent_tail_is_reported() {
        // constant drift with linear σ: the speed density only decays like 2/x²
        let inst = build_problem(&ProblemConfig {
            drift: DriftFamily::Constant { m: 1.0 },
            dispersion: DispersionFamily::Power { b: 1.0, scale: 1.0 },
            terminal: TerminalCostFamily::Quadratic { kappa: 1.0 },
            running: RunningCostFamily::Quadratic { beta: 1.0 },
            c: 1.0,
        })
        .unwrap();
        let sp = ScaleSpec::new(&inst, -0.01, 1.0, 2.0).unwrap().speed();
        assert!(matches!(
            sp.tail_mass(1.0),
            Err(HittingError::DivergentTail { .. })
        ));
    }

    #[test]
    fn oracle_examples() {
        let inst = qc(1.0);
        assert_eq!(
            expected_hitting_time_oracle(&inst, -1.0, 1.0, 1.0, 3.0).unwrap(),
            0.0
        );
        let e3 = expected_hitting_time_oracle(&inst, -1.0, 1.0, 2.0, 3.0).unwrap();
        let e5 = expected_hitting_time_oracle(&inst, -1.0, 1.0, 2.0, 5.0).unwrap();
        assert!((e3 - 1.0).abs() < 1e-6, "{e3}");
        assert!((e3 - e5).abs() < 1e-8, "{e3} vs {e5}");
    }

    #[test]
    fn oracle_agrees_with_closed_form_on_lattice() {
        for inst in [qc(1.0), geo(1.0), power2(), slow_constant()] {
            for u in [-0.5, -1.0, -2.5] {
                for (s, x) in [(0.5, 0.9), (0.8, 2.0), (1.0, 3.0)] {
                    let closed = expected_hitting_time(&inst, u, s, x).unwrap();
                    let oracle = expected_hitting_time_oracle(&inst, u, s, x, s + 1.0).unwrap();
                    assert!(
                        (closed - oracle).abs() <= 1e-6 * closed.max(1.0),
                        "{:?} u={u} s={s} x={x}: {closed} vs {oracle}",
                        inst.drift()
                    );
                }
            }
        }
    }

    #[test]
    fn closed_form_monotonicity() {
        for inst in [qc(1.0), geo(1.0), power2()] {
            let e = |u: f64, s: f64, x: f64| expected_hitting_time(&inst, u, s, x).unwrap();
            for &s in &[0.3, 0.7, 1.1] {
                for &u in &[-0.4, -1.0, -3.0] {
                    assert!(e(u, s, s + 1.0) < e(u, s, s + 2.0));
                    assert!(e(u, s, 3.0) > e(u * 1.5, s, 3.0));
                    assert!(e(u, s, 3.0) > e(u, s * 1.2, 3.0));
                }
            }
        }
    }

    #[test]
    fn scale_function_diverges() {
        for inst in [qc(1.0), geo(1.0), power2(), slow_constant()] {
            let sc = ScaleSpec::new(&inst, -0.5, 0.8, 1.8).unwrap();
            let p = sc.value(1e6).unwrap();
            assert!(
                p > 1e6 * sc.density(sc.reference()) * 0.1,
                "{:?}: {p}",
                inst.drift()
            );
        }
    }
}
