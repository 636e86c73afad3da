//! The inverse ξ = (ψ′)⁻¹ of the marginal running cost and the Legendre-type
//! transform η(z) = min_u [u·z + ψ(u)] = z·ξ(−z) + ψ(ξ(−z)).

use thiserror::Error;

use crate::problem::RunningCostFamily;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvexError {
    #[error("could not bracket a root of psi'(u) = {target} within {doublings} doublings")]
    BracketFailed { target: f64, doublings: u32 },
}

const MAX_DOUBLINGS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatePair {
    running: RunningCostFamily,
}

impl ConjugatePair {
    pub fn new(running: RunningCostFamily) -> Self {
        Self { running }
    }

    pub fn running(&self) -> &RunningCostFamily {
        &self.running
    }

    /// The control `u` with ψ′(u) = z, from the closed-form inverse.
    #[inline]
    pub fn xi(&self, z: f64) -> f64 {
        match self.running {
            RunningCostFamily::Quadratic { beta } => z / (2.0 * beta),
            RunningCostFamily::EvenPower { .. } if z == 0.0 => 0.0,
            RunningCostFamily::EvenPower { beta, p } => {
                z.signum() * (z.abs() / (beta * p)).powf(1.0 / (p - 1.0))
            }
        }
    }

    /// ξ by monotone root finding on ψ′ with an expanding bracket.
    ///
    /// Independent of the closed forms in [`ConjugatePair::xi`]; tolerance is
    /// 1e-12 absolute (relative for large roots).
    pub fn xi_numeric(&self, z: f64) -> Result<f64, ConvexError> {
        if z == 0.0 {
            return Ok(0.0);
        }
        let psi_p = |u: f64| self.running.derivative(u);
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut doublings = 0;
        while psi_p(lo) > z || psi_p(hi) < z {
            if doublings >= MAX_DOUBLINGS || !lo.is_finite() || !hi.is_finite() {
                return Err(ConvexError::BracketFailed {
                    target: z,
                    doublings,
                });
            }
            lo *= 2.0;
            hi *= 2.0;
            doublings += 1;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-12 * mid.abs().max(1.0) || mid == lo || mid == hi {
                return Ok(mid);
            }
            if psi_p(mid) < z {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// η(z); closed form −z²/(4β) for quadratic running cost.
    #[inline]
    pub fn eta(&self, z: f64) -> f64 {
        match self.running {
            RunningCostFamily::Quadratic { beta } => -z * z / (4.0 * beta),
            RunningCostFamily::EvenPower { .. } => {
                let u = self.xi(-z);
                z * u + self.running.value(u)
            }
        }
    }

    /// |central difference of η at z with step h − ξ(−z)|.
    pub fn eta_derivative_residual(&self, z: f64, h: f64) -> f64 {
        let fd = (self.eta(z + h) - self.eta(z - h)) / (2.0 * h);
        (fd - self.xi(-z)).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> ConjugatePair {
        ConjugatePair::new(RunningCostFamily::Quadratic { beta: 1.0 })
    }

    fn quartic() -> ConjugatePair {
        ConjugatePair::new(RunningCostFamily::EvenPower { beta: 1.0, p: 4.0 })
    }

    #[test]
    fn xi_examples() {
        assert_eq!(quad().xi(0.0), 0.0);
        assert_eq!(quad().xi(-2.0), -1.0);
        assert!((quartic().xi(4.0) - 1.0).abs() < 1e-15);
        assert_eq!(quartic().xi(0.0), 0.0);
    }

    #[test]
    fn eta_examples() {
        assert_eq!(quad().eta(0.0), 0.0);
        assert_eq!(quad().eta(2.0), -1.0);
        assert!((quartic().eta(4.0) + 3.0).abs() < 1e-14);
    }

    #[test]
    fn eta_derivative_residuals() {
        assert!(quad().eta_derivative_residual(2.0, 1e-5) <= 1e-8);
        assert!(quad().eta_derivative_residual(0.0, 1e-5) <= 1e-8);
        assert!(quartic().eta_derivative_residual(0.0, 1e-5) <= 1e-8);
        assert!(quartic().eta_derivative_residual(4.0, 1e-5) <= 1e-6);
    }

    #[test]
    fn numeric_inverse_matches_closed_form() {
        for pair in [
            quad(),
            quartic(),
            ConjugatePair::new(RunningCostFamily::EvenPower { beta: 0.3, p: 2.5 }),
        ] {
            for z in [-1e6, -37.0, -1.0, -1e-3, 1e-4, 0.5, 2.0, 4.0, 1e8] {
                let closed = pair.xi(z);
                let num = pair.xi_numeric(z).unwrap();
                assert!(
                    (closed - num).abs() <= 1e-11 * closed.abs().max(1.0),
                    "{pair:?} z={z}: {closed} vs {num}"
                );
            }
        }
    }

    #[test]
    fn inverse_property_holds() {
        for pair in [quad(), quartic()] {
            for z in [-50.0, -3.0, -0.2, 0.0, 0.7, 9.0, 1e3] {
                let u = pair.xi(z);
                let back = pair.running().derivative(u);
                assert!((back - z).abs() <= 1e-12 * z.abs().max(1.0), "{z}: {back}");
            }
        }
    }

    #[test]
    fn brute_force_conjugacy_oracle() {
        for pair in [quad(), quartic()] {
            for z in [0.25, 1.0, 2.0, 4.0] {
                let m = pair.xi(-z);
                let lo = -10.0 * m.abs() - 1.0;
                let n = 100_000;
                let best = (0..=n)
                    .map(|i| lo * (1.0 - i as f64 / n as f64))
                    .map(|u| u * z + pair.running().value(u))
                    .fold(f64::INFINITY, f64::min);
                let eta = pair.eta(z);
                assert!(
                    best >= eta - 1e-6 && best <= eta + 1e-6,
                    "z={z}: brute {best} vs eta {eta}"
                );
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn eta_is_negative_and_decreasing(z1 in 1e-3f64..50.0, dz in 1e-3f64..10.0, p in 2.0f64..5.0) {
            for pair in [quad(), ConjugatePair::new(RunningCostFamily::EvenPower { beta: 1.3, p })] {
                proptest::prop_assert!(pair.eta(z1) < 0.0);
                proptest::prop_assert!(pair.eta(z1) > pair.eta(z1 + dz));
                proptest::prop_assert_eq!(pair.eta(0.0), 0.0);
            }
        }

        #[test]
        fn xi_is_odd_and_increasing(z in -1e3f64..1e3, dz in 1e-3f64..1.0, p in 2.0f64..5.0) {
            let pair = ConjugatePair::new(RunningCostFamily::EvenPower { beta: 0.7, p });
            proptest::prop_assert_eq!(pair.xi(-z), -pair.xi(z));
            proptest::prop_assert!(pair.xi(z + dz) > pair.xi(z));
        }
    }
}
