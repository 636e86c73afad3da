//! Euler–Maruyama simulation of constant-control/threshold policies.
//!
//! Every path draws its normals from a ChaCha8 stream selected by the path
//! index, so a path's trajectory depends only on `(seed, path_index)`. The
//! engine collects outcomes in index order and reduces them sequentially,
//! which makes estimates bit-identical under any rayon pool size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hitting::{self, HittingError};
use crate::problem::{DriftFamily, ProblemInstance};
use crate::solver::{SolverError, ValueFunction};

pub const MAX_DT: f64 = 1e-2;
pub const MIN_ESTIMATE_PATHS: usize = 1000;
/// Largest truncated fraction for which an estimate counts as valid.
pub const MAX_TRUNCATED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: u64, step: u64 },
    #[error("variance-control mode needs unit drift mu = 1, got {0:?}")]
    UnsupportedDrift(DriftFamily),
    #[error("no finite threshold: the optimal policy stops at once and has nothing to perturb")]
    NoFiniteThreshold,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Hitting(#[from] HittingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    StopAtOnce,
    /// Apply the constant control `u` until `|X| ≤ s`.
    ConstantThreshold {
        u: f64,
        s: f64,
    },
}

impl Policy {
    pub fn validate(&self) -> Result<(), MonteCarloError> {
        match *self {
            Policy::StopAtOnce => Ok(()),
            Policy::ConstantThreshold { u, s } if u.is_finite() && s > 0.0 && s.is_finite() => {
                Ok(())
            }
            Policy::ConstantThreshold { u, s } => Err(MonteCarloError::InvalidPolicy(format!(
                "need finite u and 0 < s < inf, got u = {u}, s = {s}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `dX = uμ(X)dt + σ(X)dW`
    #[default]
    DriftControl,
    /// `dX = u dt + uσ(X)dW`
    VarianceControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Truncation horizon; `None` picks `max(50, 20·E[τ])` per policy.
    pub t_max: Option<f64>,
    pub mode: Mode,
}

impl SimConfig {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            n_paths,
            seed,
            t_max: None,
            mode: Mode::DriftControl,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = Some(t_max);
        self
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(MonteCarloError::InvalidConfig(format!(
                "dt must lie in (0, {MAX_DT}], got {}",
                self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(MonteCarloError::InvalidConfig(
                "n_paths must be positive".into(),
            ));
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0 && t.is_finite()) {
                return Err(MonteCarloError::InvalidConfig(format!(
                    "t_max must be positive and finite, got {t}"
                )));
            }
        }
        Ok(())
    }
}

fn check_mode(instance: &ProblemInstance, mode: Mode) -> Result<(), MonteCarloError> {
    match (mode, instance.drift()) {
        (Mode::DriftControl, _) | (Mode::VarianceControl, DriftFamily::Constant { m: 1.0 }) => {
            Ok(())
        }
        (Mode::VarianceControl, d) => Err(MonteCarloError::UnsupportedDrift(*d)),
    }
}

/// Closed-form `E[τ]` for a threshold policy, when one exists.
pub fn analytic_stop_time(instance: &ProblemInstance, policy: &Policy, x: f64) -> Option<f64> {
    match *policy {
        Policy::StopAtOnce => Some(0.0),
        Policy::ConstantThreshold { s, .. } if x.abs() <= s => Some(0.0),
        Policy::ConstantThreshold { u, s } => {
            hitting::expected_hitting_time(instance, u, s, x.abs()).ok()
        }
    }
}

/// The truncation horizon actually used for `policy` started at `x`.
pub fn effective_t_max(
    instance: &ProblemInstance,
    policy: &Policy,
    x: f64,
    cfg: &SimConfig,
) -> Result<f64, MonteCarloError> {
    let expected = analytic_stop_time(instance, policy, x);
    match cfg.t_max {
        None => Ok(50f64.max(20.0 * expected.unwrap_or(0.0))),
        Some(t) => {
            let floor = 10.0 * expected.unwrap_or(10.0);
            if t < floor {
                Err(MonteCarloError::InvalidConfig(format!(
                    "t_max = {t} is below 10 * E[tau] = {floor}"
                )))
            } else {
                Ok(t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub stop_time: f64,
    pub terminal_x: f64,
    /// k(X_τ) + (ψ(u) + c)·τ
    pub accumulated_cost: f64,
    pub truncated: bool,
}

fn run_path(
    instance: &ProblemInstance,
    policy: &Policy,
    x: f64,
    cfg: &SimConfig,
    t_max: f64,
    path_index: u64,
) -> Result<PathOutcome, MonteCarloError> {
    let x0 = x.abs();
    let (u, s) = match *policy {
        Policy::ConstantThreshold { u, s } if x0 > s => (u, s),
        _ => {
            return Ok(PathOutcome {
                stop_time: 0.0,
                terminal_x: x0,
                accumulated_cost: instance.k(x0),
                truncated: false,
            });
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path_index);
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let max_steps = (t_max / dt).ceil() as u64;
    let mut state = x0;
    let mut step = 0u64;
    let mut truncated = true;
    while step < max_steps {
        let z: f64 = rng.sample(StandardNormal);
        state += match cfg.mode {
            Mode::DriftControl => u * instance.mu(state) * dt + instance.sigma(state) * sqrt_dt * z,
            Mode::VarianceControl => u * dt + u * instance.sigma(state) * sqrt_dt * z,
        };
        step += 1;
        if !state.is_finite() {
            return Err(MonteCarloError::NonFiniteState {
                path: path_index,
                step,
            });
        }
        if state <= s {
            truncated = false;
            break;
        }
    }
    let tau = step as f64 * dt;
    let running = (instance.psi(u) + instance.operating_cost()) * tau;
    Ok(PathOutcome {
        stop_time: tau,
        terminal_x: state,
        accumulated_cost: instance.k(state) + running,
        truncated,
    })
}

/// Simulates one path; `x < 0` is reflected to `|x|`.
pub fn simulate_path(
    instance: &ProblemInstance,
    policy: &Policy,
    x: f64,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<PathOutcome, MonteCarloError> {
    cfg.validate()?;
    policy.validate()?;
    check_mode(instance, cfg.mode)?;
    let t_max = effective_t_max(instance, policy, x, cfg)?;
    run_path(instance, policy, x, cfg, t_max, path_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n_paths: usize,
    pub n_truncated: usize,
    pub mean_stop_time: f64,
    pub stop_time_standard_error: f64,
    /// False when more than 1% of paths hit the truncation horizon.
    pub valid: bool,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (nf - 1.0) / nf).sqrt())
}

fn summarize(outcomes: &[PathOutcome], value: impl Fn(&PathOutcome) -> f64) -> CostEstimate {
    let n = outcomes.len();
    let (mean, se) = mean_and_se(outcomes.iter().map(&value), n);
    let (mean_t, se_t) = mean_and_se(outcomes.iter().map(|o| o.stop_time), n);
    let n_truncated = outcomes.iter().filter(|o| o.truncated).count();
    CostEstimate {
        mean,
        standard_error: se,
        ci95_low: mean - 1.96 * se,
        ci95_high: mean + 1.96 * se,
        n_paths: n,
        n_truncated,
        mean_stop_time: mean_t,
        stop_time_standard_error: se_t,
        valid: n_truncated as f64 <= MAX_TRUNCATED_FRACTION * n as f64,
    }
}

fn run_all(
    instance: &ProblemInstance,
    policy: &Policy,
    x: f64,
    cfg: &SimConfig,
) -> Result<Vec<PathOutcome>, MonteCarloError> {
    cfg.validate()?;
    if cfg.n_paths < MIN_ESTIMATE_PATHS {
        return Err(MonteCarloError::InvalidConfig(format!(
            "estimates need at least {MIN_ESTIMATE_PATHS} paths, got {}",
            cfg.n_paths
        )));
    }
    policy.validate()?;
    check_mode(instance, cfg.mode)?;
    let t_max = effective_t_max(instance, policy, x, cfg)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| run_path(instance, policy, x, cfg, t_max, i))
        .collect()
}

/// Sample statistics of the total cost over `cfg.n_paths` paths, run on the
/// current rayon pool.
pub fn estimate_cost(
    instance: &ProblemInstance,
    policy: &Policy,
    x: f64,
    cfg: &SimConfig,
) -> Result<CostEstimate, MonteCarloError> {
    Ok(summarize(&run_all(instance, policy, x, cfg)?, |o| {
        o.accumulated_cost
    }))
}

/// Statistics of the stop time alone; `mean` is the mean of τ.
pub fn estimate_hitting_time(
    instance: &ProblemInstance,
    u: f64,
    s: f64,
    x: f64,
    cfg: &SimConfig,
) -> Result<CostEstimate, MonteCarloError> {
    if !(u < 0.0) {
        return Err(MonteCarloError::InvalidPolicy(format!(
            "hitting-time estimates need u < 0, got {u}"
        )));
    }
    let policy = Policy::ConstantThreshold { u, s };
    Ok(summarize(&run_all(instance, &policy, x, cfg)?, |o| {
        o.stop_time
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub u_scale: f64,
    pub s_scale: f64,
    pub u: f64,
    pub s: f64,
    pub estimate: CostEstimate,
    /// mean − (V(x) − 3·SE − bias_budget)
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub x: f64,
    pub value: f64,
    pub bias_budget: f64,
    pub rows: Vec<PerturbationRow>,
}

impl PerturbationReport {
    pub fn identity(&self) -> Option<&PerturbationRow> {
        self.rows
            .iter()
            .find(|r| r.u_scale == 1.0 && r.s_scale == 1.0)
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let header = [
            "u_scale",
            "s_scale",
            "u",
            "s",
            "mean",
            "standard_error",
            "ci95_low",
            "ci95_high",
            "n_paths",
            "n_truncated",
            "mean_stop_time",
            "V",
            "passed",
        ];
        w.write_record(header).expect("in-memory write");
        for r in &self.rows {
            let e = &r.estimate;
            w.write_record([
                r.u_scale.to_string(),
                r.s_scale.to_string(),
                r.u.to_string(),
                r.s.to_string(),
                e.mean.to_string(),
                e.standard_error.to_string(),
                e.ci95_low.to_string(),
                e.ci95_high.to_string(),
                e.n_paths.to_string(),
                e.n_truncated.to_string(),
                e.mean_stop_time.to_string(),
                self.value.to_string(),
                r.passed.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
}

/// Estimates the cost of `(u*·u_scale, s·s_scale)` for each perturbation and
/// checks it against the lower bound `V(x) − 3·SE − bias_budget`. The
/// identity `(1, 1)` is added when missing and must match V(x) within
/// `3·SE + bias_budget` on both sides.
pub fn perturbation_suite(
    instance: &ProblemInstance,
    x: f64,
    cfg: &SimConfig,
    perturbations: &[(f64, f64)],
    bias_budget: f64,
) -> Result<PerturbationReport, MonteCarloError> {
    let vf = ValueFunction::solve(instance)?;
    let fb = *vf.boundary().ok_or(MonteCarloError::NoFiniteThreshold)?;
    let value = vf.value_at(x)?;
    let mut scales = perturbations.to_vec();
    if !scales.iter().any(|&(a, b)| a == 1.0 && b == 1.0) {
        scales.insert(0, (1.0, 1.0));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for (u_scale, s_scale) in scales {
        let policy = Policy::ConstantThreshold {
            u: fb.u_star * u_scale,
            s: fb.s * s_scale,
        };
        let Policy::ConstantThreshold { u, s } = policy else {
            unreachable!()
        };
        let estimate = estimate_cost(instance, &policy, x, cfg)?;
        let slack = 3.0 * estimate.standard_error + bias_budget;
        let margin = estimate.mean - (value - slack);
        let identity = u_scale == 1.0 && s_scale == 1.0;
        let passed =
            estimate.valid && margin >= 0.0 && (!identity || estimate.mean <= value + slack);
        rows.push(PerturbationRow {
            u_scale,
            s_scale,
            u,
            s,
            estimate,
            margin,
            passed,
        });
    }
    Ok(PerturbationReport {
        x,
        value,
        bias_budget,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::{geo, qc};

    fn small(seed: u64) -> SimConfig {
        SimConfig::new(1e-3, 4000, seed)
    }

    #[test]
    fn trivial_paths() {
        let inst = qc(1.0);
        let cfg = small(1);
        let o = simulate_path(&inst, &Policy::StopAtOnce, 2.0, &cfg, 0).unwrap();
        assert_eq!(
            (o.stop_time, o.accumulated_cost, o.truncated),
            (0.0, 4.0, false)
        );
        let o = simulate_path(
            &inst,
            &Policy::ConstantThreshold { u: -1.0, s: 1.0 },
            1.0,
            &cfg,
            7,
        )
        .unwrap();
        assert_eq!((o.stop_time, o.accumulated_cost), (0.0, 1.0));
        let o = simulate_path(&inst, &Policy::StopAtOnce, -2.0, &cfg, 0).unwrap();
        assert_eq!(o.terminal_x, 2.0);
    }

    #[test]
    fn single_path_stops_below_threshold() {
        let inst = qc(1.0);
        let o = simulate_path(
            &inst,
            &Policy::ConstantThreshold { u: -1.0, s: 1.0 },
            2.0,
            &small(3),
            11,
        )
        .unwrap();
        assert!(o.stop_time > 0.0 && o.stop_time.is_finite() && !o.truncated);
        assert!(o.terminal_x <= 1.0);
        assert!(o.accumulated_cost >= 0.0);
        let again = simulate_path(
            &inst,
            &Policy::ConstantThreshold { u: -1.0, s: 1.0 },
            2.0,
            &small(3),
            11,
        )
        .unwrap();
        assert_eq!(o, again);
    }

    #[test]
    fn stop_at_once_estimate_is_exact() {
        let e = estimate_cost(&qc(1.0), &Policy::StopAtOnce, 2.0, &small(5)).unwrap();
        assert_eq!((e.mean, e.standard_error, e.n_truncated), (4.0, 0.0, 0));
        assert!(e.valid);
    }

    #[test]
    fn config_validation() {
        let inst = qc(1.0);
        let p = Policy::ConstantThreshold { u: -1.0, s: 1.0 };
        assert!(matches!(
            estimate_cost(&inst, &p, 2.0, &SimConfig::new(0.02, 4000, 0)),
            Err(MonteCarloError::InvalidConfig(_))
        ));
        assert!(matches!(
            estimate_cost(&inst, &p, 2.0, &SimConfig::new(1e-3, 999, 0)),
            Err(MonteCarloError::InvalidConfig(_))
        ));
        assert!(matches!(
            estimate_cost(&inst, &p, 2.0, &small(0).with_t_max(5.0)),
            Err(MonteCarloError::InvalidConfig(_))
        ));
        assert!(matches!(
            estimate_cost(
                &inst,
                &Policy::ConstantThreshold { u: -1.0, s: 0.0 },
                2.0,
                &small(0)
            ),
            Err(MonteCarloError::InvalidPolicy(_))
        ));
        assert!(matches!(
            estimate_cost(
                &geo(1.0),
                &p,
                2.0,
                &small(0).with_mode(Mode::VarianceControl)
            ),
            Err(MonteCarloError::UnsupportedDrift(_))
        ));
    }

    #[test]
    fn truncation_is_counted() {
        let inst = qc(1.0);
        let cfg = SimConfig::new(1e-2, 1000, 9).with_t_max(100.0);
        let e = estimate_cost(
            &inst,
            &Policy::ConstantThreshold { u: 0.5, s: 1.0 },
            2.0,
            &cfg,
        )
        .unwrap();
        assert!(e.n_truncated > 10);
        assert!(!e.valid);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let inst = geo(1.0);
        let p = Policy::ConstantThreshold { u: -0.6, s: 0.8 };
        let cfg = small(42);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_cost(&inst, &p, 2.0, &cfg).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
        assert_ne!(one, estimate_cost(&inst, &p, 2.0, &small(43)).unwrap());
    }

    #[test]
    fn hitting_time_estimates() {
        let inst = qc(1.0);
        let e = estimate_hitting_time(&inst, -1.0, 1.0, 1.0, &small(1)).unwrap();
        assert_eq!(e.mean, 0.0);
        let e =
            estimate_hitting_time(&inst, -1.0, 1.0, 2.0, &SimConfig::new(1e-3, 20_000, 2)).unwrap();
        assert!(
            (e.mean - 1.0).abs() <= 3.0 * e.standard_error + 0.02,
            "{e:?}"
        );
        assert!(estimate_hitting_time(&inst, 0.3, 1.0, 2.0, &small(1)).is_err());
    }

    #[test]
    fn suite_adds_identity_and_handles_immediate_stop() {
        let inst = qc(1.0);
        let r = perturbation_suite(
            &inst,
            2.0,
            &SimConfig::new(2e-3, 5000, 8),
            &[(1.0, 2.5)],
            0.05,
        )
        .unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.identity().is_some());
        let far = &r.rows[1];
        assert_eq!(far.estimate.mean, 4.0);
        assert!(far.passed);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("u_scale,s_scale,u,s,mean"));
    }
}
