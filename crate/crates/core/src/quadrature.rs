//! Adaptive Simpson quadrature.
//!
//! Intervals are refined with an explicit work stack instead of recursion and
//! each accepted panel contributes its Richardson-corrected estimate
//! `S2 + (S2 - S1) / 15`. The tolerance is split in half on every bisection so
//! the accumulated error stays below the requested absolute tolerance for
//! smooth integrands.

use thiserror::Error;

/// Upper bound on the number of panels processed by a single integration.
pub const MAX_SUBDIVISIONS: usize = 1_000_000;

const INITIAL_PANELS: usize = 8;
const MAX_DEPTH: u32 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("integrand is not finite at x = {x}")]
    NonFinite { x: f64 },
    #[error("integration bounds must be finite, got [{a}, {b}]")]
    InvalidBounds { a: f64, b: f64 },
    #[error(
        "adaptive Simpson did not converge within {MAX_SUBDIVISIONS} subdivisions on [{a}, {b}]"
    )]
    SubdivisionLimit { a: f64, b: f64 },
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

fn eval<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64, QuadratureError> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(QuadratureError::NonFinite { x })
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol`.
///
/// Reversed bounds flip the sign of the result; `a == b` yields zero without
/// evaluating `f`.
pub fn integrate<F>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    if !a.is_finite() || !b.is_finite() {
        return Err(QuadratureError::InvalidBounds { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate(f, b, a, abs_tol).map(|v| -v);
    }
    let tol = abs_tol.max(f64::MIN_POSITIVE);

    let width = (b - a) / INITIAL_PANELS as f64;
    let mut stack: Vec<Panel> = Vec::with_capacity(128);
    let mut left = a;
    let mut f_left = eval(&f, a)?;
    for i in 0..INITIAL_PANELS {
        let right = if i + 1 == INITIAL_PANELS {
            b
        } else {
            a + width * (i + 1) as f64
        };
        let mid = 0.5 * (left + right);
        let fm = eval(&f, mid)?;
        let fb = eval(&f, right)?;
        stack.push(Panel {
            a: left,
            b: right,
            fa: f_left,
            fm,
            fb,
            whole: simpson(left, right, f_left, fm, fb),
            tol: tol / INITIAL_PANELS as f64,
            depth: 0,
        });
        left = right;
        f_left = fb;
    }

    // Kahan summation keeps the total independent of panel count noise.
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut processed = 0usize;
    while let Some(p) = stack.pop() {
        processed += 1;
        if processed > MAX_SUBDIVISIONS {
            return Err(QuadratureError::SubdivisionLimit { a, b });
        }
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = eval(&f, lm)?;
        let frm = eval(&f, rm)?;
        let s_left = simpson(p.a, m, p.fa, flm, p.fm);
        let s_right = simpson(m, p.b, p.fm, frm, p.fb);
        let refined = s_left + s_right;
        let delta = refined - p.whole;
        let converged = delta.abs() <= 15.0 * p.tol;
        let too_fine = p.depth >= MAX_DEPTH || lm <= p.a || rm >= p.b;
        if converged || too_fine {
            let y = refined + delta / 15.0 - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        } else {
            let half = 0.5 * p.tol;
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: s_right,
                tol: half,
                depth: p.depth + 1,
            });
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: s_left,
                tol: half,
                depth: p.depth + 1,
            });
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 1e-12).unwrap();
        assert!((v - 3.75).abs() < 1e-13, "{v}");
    }

    #[test]
    fn reciprocal_matches_log() {
        let v = integrate(|y| 1.0 / y, 0.5, 7.0, 1e-12).unwrap();
        assert!((v - (14.0f64).ln()).abs() < 1e-11);
    }

    #[test]
    fn reversed_and_empty_bounds() {
        let f = |x: f64| x.exp();
        let fwd = integrate(f, 0.0, 1.0, 1e-12).unwrap();
        let back = integrate(f, 1.0, 0.0, 1e-12).unwrap();
        assert_eq!(fwd, -back);
        assert_eq!(integrate(f, 3.0, 3.0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn sharp_peak_converges() {
        // ∫ exp(-x²/ε²) over a wide interval ≈ ε√π
        let eps = 1e-2;
        let v = integrate(|x| (-(x / eps) * (x / eps)).exp(), -3.0, 5.0, 1e-12).unwrap();
        assert!((v - eps * std::f64::consts::PI.sqrt()).abs() < 1e-10, "{v}");
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let err = integrate(|x| if x > 0.5 { f64::NAN } else { x }, 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, QuadratureError::NonFinite { .. }));
        let err = integrate(|x| x, 0.0, f64::INFINITY, 1e-10).unwrap_err();
        assert!(matches!(err, QuadratureError::InvalidBounds { .. }));
    }
}
