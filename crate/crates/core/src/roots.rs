//! Bracketed scalar root finding (Brent's method with a bisection fallback).

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("root finder did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Absolute width below which the bracket counts as collapsed.
    pub x_tol: f64,
    /// Residual |f(x)| accepted as a root.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            x_tol: 0.0,
            f_tol: 1e-14,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Finds a root of `f` in `[lo, hi]`, where `f(lo)` and `f(hi)` differ in sign.
///
/// Inverse quadratic interpolation and secant steps are taken when they stay
/// inside the bracket and shrink it fast enough; otherwise the step bisects.
/// Non-finite function values (overflow far out in the bracket) are treated
/// by their sign and force a bisection step.
pub fn brent<F>(f: F, lo: f64, hi: f64, opts: RootOptions) -> Result<Root, RootError>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(Root {
            x: a,
            residual: 0.0,
            iterations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(Root {
            x: b,
            residual: 0.0,
            iterations: 0,
        });
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(RootError::NotBracketed {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=opts.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.x_tol;
        let half = 0.5 * (c - b);
        if fb.abs() <= opts.f_tol || half.abs() <= tol {
            return Ok(Root {
                x: b,
                residual: fb.abs(),
                iterations: iter,
            });
        }
        let finite = fa.is_finite() && fb.is_finite() && fc.is_finite();
        if finite && e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * half * s, 1.0 - s)
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * half * qa * (qa - r) - (b - a) * (r - 1.0)),
                    (qa - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * half * q - (tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = half;
                e = d;
            }
        } else {
            d = half;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(half) };
        fb = f(b);
        if fb.is_nan() {
            return Err(RootError::NotBracketed {
                lo,
                hi,
                f_lo: fa,
                f_hi: fb,
            });
        }
    }
    Err(RootError::NoConvergence {
        iterations: opts.max_iter,
    })
}
