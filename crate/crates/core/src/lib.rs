//! Drift control of a one-dimensional diffusion with discretionary stopping.
//!
//! [`solver`] computes the optimal threshold, control and value function,
//! [`constrained`] handles the variant with a bound on the expected stopping
//! time, and [`hitting`] and [`montecarlo`] supply independent checks.

pub mod cli;
pub mod constrained;
pub mod convex;
pub mod hitting;
pub mod montecarlo;
pub mod problem;
pub mod quadrature;
pub mod roots;
pub mod solver;
