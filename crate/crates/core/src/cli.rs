//! Batch front end behind the `stopctl` binary.
//!
//! A run reads one JSON document with a `problem` block and optional
//! per-command blocks, executes a single command and renders its report as
//! JSON (solve, constrained, verify) or CSV (simulate, sweep).

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::constrained::{self, ConstrainedSolution};
use crate::hitting;
use crate::montecarlo::{self, CostEstimate, Mode, Policy, SimConfig};
use crate::problem::{self, build_problem, log_grid, ProblemConfig, ProblemInstance};
use crate::solver::{self, Regime, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Solve,
    Constrained,
    Simulate,
    Verify,
    Sweep,
}

#[derive(Debug, Parser)]
#[command(
    name = "stopctl",
    version,
    about = "Drift control with discretionary stopping"
)]
pub struct Args {
    #[arg(long)]
    pub config: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub command: Command,
    /// Overrides `simulate.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("too many truncated paths: {0}")]
    Truncation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::VerifyFailed(_) => 4,
            CliError::Truncation(_) => 5,
        }
    }
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

/// `alpha` as written in a config: a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Finite(f64),
    Infinite(InfLiteral),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfLiteral {
    #[serde(rename = "inf")]
    Inf,
}

impl AlphaSpec {
    pub fn value(&self) -> f64 {
        match *self {
            AlphaSpec::Finite(a) => a,
            AlphaSpec::Infinite(_) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPolicy {
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Named(NamedPolicy),
    Explicit(Policy),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveBlock {
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vi_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstrainedBlock {
    pub x: f64,
    pub alpha: AlphaSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub x: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub policy: PolicySpec,
    /// `(u_scale, s_scale)` pairs, only with the optimal policy.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbations: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// Starting points for the hitting-time and envelope checks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vi_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub x: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<AlphaSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<ConstrainedBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn instance(&self) -> Result<ProblemInstance, CliError> {
        build_problem(&self.problem).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Renders a possibly infinite threshold: finite numbers as JSON numbers,
/// `+∞` as the string `"inf"`.
fn num(v: f64) -> Value {
    if v == f64::INFINITY {
        json!("inf")
    } else {
        json!(v)
    }
}

fn csv_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn check_finite_x(xs: &[f64]) -> Result<(), CliError> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(CliError::Config(format!("x = {x} is not finite"))),
        None => Ok(()),
    }
}

pub fn cmd_solve(instance: &ProblemInstance, block: &SolveBlock) -> Result<String, CliError> {
    check_finite_x(&block.x)?;
    let vf = ValueFunction::solve(instance).map_err(solver_err)?;
    let mut report = json!({ "c": instance.operating_cost() });
    match vf.regime() {
        Regime::Continue(fb) => {
            report["regime"] = json!("continue");
            report["s"] = json!(fb.s);
            report["gamma"] = json!(fb.gamma);
            report["b"] = json!(fb.b);
            report["u_star"] = json!(fb.u_star);
            report["zeta_residual"] = json!(fb.residual);
        }
        Regime::StopAtOnce => {
            report["regime"] = json!("stop_at_once");
            report["s"] = num(f64::INFINITY);
            report["note"] = json!("s = infinite; stop at once; V = k");
        }
        Regime::ZeroCost => {
            report["regime"] = json!("zero_cost");
            report["s"] = num(f64::INFINITY);
            report["note"] = json!(format!("c = 0: V = k(0) = {} everywhere", instance.k(0.0)));
        }
    }
    let mut rows = Vec::with_capacity(block.x.len());
    for &x in &block.x {
        rows.push(json!({ "x": x, "V": vf.value_at(x).map_err(solver_err)? }));
    }
    report["values"] = Value::Array(rows);
    let s = vf.boundary().map(|fb| fb.s);
    let hi = 5.0 * s.unwrap_or(1.0);
    let grid = solver::vi_grid(0.01, hi, block.vi_points.unwrap_or(10_000), s, true);
    let vi = solver::check_variational_inequalities(&vf, &grid, problem::DEFAULT_TOL)
        .map_err(solver_err)?;
    report["vi"] = json!({
        "passed": vi.passed,
        "points": vi.points.len(),
        "excluded": vi.excluded,
        "min_r1": vi.min_r1,
        "min_r2": vi.min_r2,
        "max_complementarity": vi.max_complementarity,
        "tol": vi.tol,
    });
    Ok(pretty(&report))
}

fn constrained_json(sol: &ConstrainedSolution) -> Value {
    let mut v = json!({
        "x": sol.x,
        "c": sol.c,
        "alpha": num(sol.alpha),
        "lambda_hat": sol.lambda_hat,
        "effective_c": sol.effective_c,
        "s": num(sol.threshold.s()),
        "V_alpha": sol.value,
        "E_tau": sol.expected_tau,
        "slackness_residual": sol.slackness_residual,
    });
    if let Some(fb) = sol.threshold.boundary() {
        v["u_star"] = json!(fb.u_star);
    }
    if sol.degenerate_zero_cost {
        v["note"] = json!("c = 0 and lambda_hat = 0: value is the c -> 0+ limit k(0)");
    }
    v
}

pub fn cmd_constrained(
    instance: &ProblemInstance,
    block: &ConstrainedBlock,
) -> Result<String, CliError> {
    let alpha = block.alpha.value();
    if !(alpha >= 0.0) || !block.x.is_finite() || block.x < 0.0 {
        return Err(CliError::Config(format!(
            "need x >= 0 and alpha >= 0, got x = {}, alpha = {alpha}",
            block.x
        )));
    }
    let sol = constrained::constrained_value(instance, block.x, instance.operating_cost(), alpha)
        .map_err(solver_err)?;
    Ok(pretty(&constrained_json(&sol)))
}

fn sim_config(block: &SimulateBlock, seed: u64) -> SimConfig {
    let mut cfg =
        SimConfig::new(block.dt, block.n_paths, seed).with_mode(block.mode.unwrap_or_default());
    cfg.t_max = block.t_max;
    cfg
}

fn mc_err(e: montecarlo::MonteCarloError) -> CliError {
    match e {
        montecarlo::MonteCarloError::InvalidConfig(_)
        | montecarlo::MonteCarloError::InvalidPolicy(_)
        | montecarlo::MonteCarloError::UnsupportedDrift(_) => CliError::Config(e.to_string()),
        other => CliError::Solver(other.to_string()),
    }
}

struct SimRow {
    label: String,
    u: Option<f64>,
    s: Option<f64>,
    estimate: CostEstimate,
    value: Option<f64>,
    within_budget: Option<bool>,
}

/// CSV with one row per simulated policy. `within_budget` compares the
/// optimal policy against V(x) (two-sided) and perturbed policies against
/// the lower bound V(x) − 3·SE − bias_budget.
pub fn cmd_simulate(
    instance: &ProblemInstance,
    block: &SimulateBlock,
    seed: u64,
) -> Result<String, CliError> {
    let cfg = sim_config(block, seed);
    let budget = block.bias_budget.unwrap_or(0.03);
    let mut rows = Vec::new();
    match block.policy {
        PolicySpec::Named(NamedPolicy::Optimal) => {
            let vf = ValueFunction::solve(instance).map_err(solver_err)?;
            let value = vf.value_at(block.x).map_err(solver_err)?;
            if vf.boundary().is_some() {
                let report = montecarlo::perturbation_suite(
                    instance,
                    block.x,
                    &cfg,
                    &block.perturbations,
                    budget,
                )
                .map_err(mc_err)?;
                for r in report.rows {
                    let identity = r.u_scale == 1.0 && r.s_scale == 1.0;
                    rows.push(SimRow {
                        label: if identity {
                            "optimal".into()
                        } else {
                            format!("perturbed({}x{})", r.u_scale, r.s_scale)
                        },
                        u: Some(r.u),
                        s: Some(r.s),
                        estimate: r.estimate,
                        value: Some(value),
                        within_budget: Some(r.passed),
                    });
                }
            } else {
                if !block.perturbations.is_empty() {
                    return Err(CliError::Config(
                        "perturbations need a finite optimal threshold".into(),
                    ));
                }
                let estimate =
                    montecarlo::estimate_cost(instance, &Policy::StopAtOnce, block.x, &cfg)
                        .map_err(mc_err)?;
                let ok = (estimate.mean - value).abs() <= 3.0 * estimate.standard_error + budget;
                rows.push(SimRow {
                    label: "optimal".into(),
                    u: None,
                    s: None,
                    estimate,
                    value: Some(value),
                    within_budget: Some(ok),
                });
            }
        }
        PolicySpec::Explicit(policy) => {
            if !block.perturbations.is_empty() {
                return Err(CliError::Config(
                    "perturbations apply only to the optimal policy".into(),
                ));
            }
            let estimate =
                montecarlo::estimate_cost(instance, &policy, block.x, &cfg).map_err(mc_err)?;
            let value = ValueFunction::solve(instance)
                .and_then(|vf| vf.value_at(block.x))
                .ok();
            let (label, u, s) = match policy {
                Policy::StopAtOnce => ("stop_at_once".to_string(), None, None),
                Policy::ConstantThreshold { u, s } => {
                    ("constant_threshold".to_string(), Some(u), Some(s))
                }
            };
            let within_budget =
                value.map(|v| estimate.mean >= v - 3.0 * estimate.standard_error - budget);
            rows.push(SimRow {
                label,
                u,
                s,
                estimate,
                value,
                within_budget,
            });
        }
    }

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    w.write_record([
        "policy",
        "u",
        "s",
        "mean",
        "standard_error",
        "ci95_low",
        "ci95_high",
        "n_paths",
        "n_truncated",
        "mean_stop_time",
        "stop_time_standard_error",
        "V",
        "within_budget",
    ])
    .expect("in-memory write");
    for r in &rows {
        let e = &r.estimate;
        w.write_record([
            r.label.clone(),
            opt(r.u),
            opt(r.s),
            e.mean.to_string(),
            e.standard_error.to_string(),
            e.ci95_low.to_string(),
            e.ci95_high.to_string(),
            e.n_paths.to_string(),
            e.n_truncated.to_string(),
            e.mean_stop_time.to_string(),
            e.stop_time_standard_error.to_string(),
            opt(r.value),
            r.within_budget.map(|b| b.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    let mut out =
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8");
    if block.x < 0.0 {
        let _ = writeln!(
            out,
            "# x = {} reflected to |x| = {}",
            block.x,
            block.x.abs()
        );
    }
    if let Some(bad) = rows.iter().find(|r| !r.estimate.valid) {
        return Err(CliError::Truncation(format!(
            "{}: {} of {} paths truncated\n{out}",
            bad.label, bad.estimate.n_truncated, bad.estimate.n_paths
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tol: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn first_failure(&self) -> Option<&VerifyCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

fn check(name: impl Into<String>, value: f64, tol: f64, detail: impl Into<String>) -> VerifyCheck {
    VerifyCheck {
        name: name.into(),
        passed: value <= tol,
        value,
        tol,
        detail: detail.into(),
    }
}

/// Runs every check on an already assembled instance. Checks that need a
/// finite threshold are skipped (and say so) when there is none.
pub fn verify_instance(
    instance: &ProblemInstance,
    block: &VerifyBlock,
) -> Result<VerifyReport, CliError> {
    let tol = block.tol.unwrap_or(problem::DEFAULT_TOL);
    let mut checks = Vec::new();

    let assumptions = problem::verify_assumptions(instance, &problem::default_grid(), tol);
    for a in &assumptions.checks {
        checks.push(VerifyCheck {
            name: format!("assumption {:?}", a.assumption),
            passed: a.passed,
            value: a.worst_residual,
            tol,
            detail: a.detail.clone(),
        });
    }

    let pair = instance.conjugate();
    let eta = log_grid(1e-2, 1e2, 41)
        .into_iter()
        .map(|z| pair.eta_derivative_residual(z, 1e-5))
        .fold(0.0, f64::max);
    checks.push(check(
        "eta derivative",
        eta,
        1e-6,
        "max |(eta(z+h)-eta(z-h))/2h - xi(-z)| over z in [0.01, 100], h = 1e-5",
    ));

    if !assumptions.all_passed() {
        let passed = checks.iter().all(|c| c.passed);
        return Ok(VerifyReport { checks, passed });
    }

    let vf = ValueFunction::solve(instance).map_err(solver_err)?;
    let fb = vf.boundary().copied();
    let s = fb.map(|fb| fb.s);
    let grid = solver::vi_grid(
        0.01,
        5.0 * s.unwrap_or(1.0),
        block.vi_points.unwrap_or(10_000),
        s,
        true,
    );
    let vi = solver::check_variational_inequalities(&vf, &grid, tol).map_err(solver_err)?;
    checks.push(VerifyCheck {
        name: "variational inequalities".into(),
        passed: vi.passed,
        value: vi.max_violation,
        tol,
        detail: format!(
            "{} points, min r1 = {:e}, min r2 = {:e}, max complementarity = {:e}",
            vi.points.len(),
            vi.min_r1,
            vi.min_r2,
            vi.max_complementarity
        ),
    });

    match fb {
        None => checks.push(VerifyCheck {
            name: "threshold checks".into(),
            passed: true,
            value: 0.0,
            tol: 0.0,
            detail: "skipped: no finite threshold".into(),
        }),
        Some(fb) => {
            checks.push(check(
                "zeta residual",
                fb.residual,
                1e-12 * instance.operating_cost().max(1.0),
                "|zeta(s) + c|",
            ));
            let sf = vf.smooth_fit_residual(1e-6).map_err(solver_err)?;
            checks.push(check(
                "smooth fit",
                sf,
                1e-6,
                "|V'(s-) - V'(s+)|, one-sided differences with h = 1e-6",
            ));

            let xs = if block.x.is_empty() {
                vec![1.5 * fb.s, 2.0 * fb.s, 4.0 * fb.s]
            } else {
                block.x.clone()
            };
            check_finite_x(&xs)?;
            let mut worst = 0.0f64;
            for &x in xs.iter().filter(|x| x.abs() > fb.s) {
                let closed = hitting::expected_hitting_time(instance, fb.u_star, fb.s, x.abs())
                    .map_err(solver_err)?;
                let oracle = hitting::expected_hitting_time_oracle(
                    instance,
                    fb.u_star,
                    fb.s,
                    x.abs(),
                    fb.s + 1.0,
                )
                .map_err(solver_err)?;
                worst = worst.max((closed - oracle).abs() / closed.max(1.0));
            }
            checks.push(check(
                "hitting time oracle",
                worst,
                1e-6,
                "closed form vs scale/speed quadrature, relative",
            ));

            let c = instance.operating_cost();
            let h = 1e-4 * c.min(1.0);
            let mut env = 0.0f64;
            for &x in &xs {
                env =
                    env.max(constrained::envelope_residual(instance, x, c, h).map_err(solver_err)?);
            }
            checks.push(check(
                "envelope identity",
                env,
                1e-4,
                format!("|dV/dc - E[tau*]| with h = {h:e}"),
            ));
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, passed })
}

pub fn cmd_verify(instance: &ProblemInstance, block: &VerifyBlock) -> Result<String, CliError> {
    let report = verify_instance(instance, block)?;
    let text = pretty(&serde_json::to_value(&report).expect("report serializes"));
    match report.first_failure() {
        Some(f) => Err(CliError::VerifyFailed(format!(
            "{} ({})\n{text}",
            f.name, f.detail
        ))),
        None => Ok(text),
    }
}

/// CSV over the grid `c × alpha` (alpha defaults to `inf`), followed by
/// `#` lines summarizing monotonicity.
pub fn cmd_sweep(instance: &ProblemInstance, block: &SweepBlock) -> Result<String, CliError> {
    let cs = if block.c.is_empty() {
        vec![instance.operating_cost()]
    } else {
        block.c.clone()
    };
    let alphas: Vec<f64> = if block.alpha.is_empty() {
        vec![f64::INFINITY]
    } else {
        block.alpha.iter().map(AlphaSpec::value).collect()
    };
    if cs.iter().any(|c| !(*c > 0.0 && c.is_finite()))
        || alphas.iter().any(|a| !(*a > 0.0 || *a == 0.0))
    {
        return Err(CliError::Config(
            "sweep grids need c > 0 and alpha >= 0".into(),
        ));
    }
    if !(block.x.is_finite() && block.x >= 0.0) {
        return Err(CliError::Config(format!(
            "sweep x must be finite and nonnegative, got {}",
            block.x
        )));
    }

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["c", "alpha", "s", "u_star", "V", "lambda_hat", "E_tau"])
        .expect("in-memory write");
    let mut table = Vec::with_capacity(cs.len() * alphas.len());
    for &c in &cs {
        let inst = instance.with_operating_cost(c);
        for &alpha in &alphas {
            let sol =
                constrained::constrained_value(&inst, block.x, c, alpha).map_err(solver_err)?;
            let u_star = sol
                .threshold
                .boundary()
                .map(|fb| fb.u_star.to_string())
                .unwrap_or_else(|| "none".into());
            w.write_record([
                c.to_string(),
                csv_num(alpha),
                csv_num(sol.threshold.s()),
                u_star,
                sol.value.to_string(),
                sol.lambda_hat.to_string(),
                sol.expected_tau.to_string(),
            ])
            .expect("in-memory write");
            table.push((c, alpha, sol));
        }
    }
    let mut out =
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8");

    // monotonicity along each axis with the other held fixed
    let along_c = |f: &dyn Fn(&ConstrainedSolution, &ConstrainedSolution) -> bool| {
        alphas.iter().all(|&a| {
            let col: Vec<_> = table
                .iter()
                .filter(|r| r.1 == a)
                .map(|r| (r.0, &r.2))
                .collect();
            col.windows(2)
                .all(|p| p[1].0 <= p[0].0 || f(p[0].1, p[1].1))
        })
    };
    let along_alpha = |f: &dyn Fn(&ConstrainedSolution, &ConstrainedSolution) -> bool| {
        cs.iter().all(|&c| {
            let row: Vec<_> = table
                .iter()
                .filter(|r| r.0 == c)
                .map(|r| (r.1, &r.2))
                .collect();
            row.windows(2)
                .all(|p| p[1].0 <= p[0].0 || f(p[0].1, p[1].1))
        })
    };
    let s_inc = along_c(&|a, b| b.threshold.s() >= a.threshold.s());
    let v_inc = along_c(&|a, b| b.value >= a.value - 1e-12);
    let v_dec = along_alpha(&|a, b| b.value <= a.value + 1e-12);
    let l_dec = along_alpha(&|a, b| b.lambda_hat <= a.lambda_hat);
    let _ = writeln!(
        out,
        "# s nondecreasing in c: {s_inc}; V nondecreasing in c: {v_inc}"
    );
    let _ = writeln!(
        out,
        "# V nonincreasing in alpha: {v_dec}; lambda_hat nonincreasing in alpha: {l_dec}"
    );
    Ok(out)
}

/// Parses the config, runs one command, and returns the report text.
pub fn execute(
    config: &RunConfig,
    command: Command,
    seed_override: Option<u64>,
) -> Result<String, CliError> {
    let instance = config.instance()?;
    let missing = |name: &str| CliError::Config(format!("command `{name}` needs a `{name}` block"));
    match command {
        Command::Solve => cmd_solve(&instance, &config.solve.clone().unwrap_or_default()),
        Command::Constrained => cmd_constrained(
            &instance,
            config
                .constrained
                .as_ref()
                .ok_or_else(|| missing("constrained"))?,
        ),
        Command::Simulate => {
            let block = config
                .simulate
                .as_ref()
                .ok_or_else(|| missing("simulate"))?;
            cmd_simulate(&instance, block, seed_override.unwrap_or(block.seed))
        }
        Command::Verify => cmd_verify(&instance, &config.verify.clone().unwrap_or_default()),
        Command::Sweep => cmd_sweep(
            &instance,
            config.sweep.as_ref().ok_or_else(|| missing("sweep"))?,
        ),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &Args) -> i32 {
    let result = (|| {
        let text = std::fs::read_to_string(&args.config)
            .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
        let config = RunConfig::parse(&text)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let report = pool.install(|| execute(&config, args.command, args.seed))?;
        match &args.out {
            Some(path) => std::fs::write(path, report)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
            None => {
                print!("{report}");
                Ok(())
            }
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stopctl: {e}");
            e.exit_code()
        }
    }
}
