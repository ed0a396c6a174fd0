//! One ε-constraint subproblem: minimize the burden `f1` over the node
//! values of the free controls subject to `f2 <= ε` and the pointwise
//! admissible set.
//!
//! The effort constraint is handled by an augmented-Lagrangian outer loop.
//! Each inner problem is minimized over the admissible set by a projected
//! quasi-Newton method whose model Hessian combines a damped BFGS estimate
//! of the burden curvature with the exact curvature of the penalty term.
//! The burden gradient is a forward finite difference; each perturbed run
//! restarts the integrator at the first node the perturbation can reach.

mod evaluator;
pub mod projection;
mod quasi_newton;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{initial_state, Parameters, StateVector};
use crate::objectives::ObjectivePair;
use crate::simulate::{ControlGrid, TimeGrid, Trajectory};

use evaluator::{Evaluator, Point, Stop};
use projection::Layout;
use quasi_newton::{dot, inf_norm, projected_gradient_norm, solve_model, Bfgs, ModelHessian};

/// Treatment scenario: which controls the optimizer may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mop {
    /// Both `u1` and `u2`.
    #[serde(rename = "MOP1")]
    Mop1,
    /// `u1` only (combined HIV and TB treatment).
    #[serde(rename = "MOP2")]
    Mop2,
    /// `u2` only (TB-only treatment).
    #[serde(rename = "MOP3")]
    Mop3,
}

impl Mop {
    pub const ALL: [Mop; 3] = [Mop::Mop1, Mop::Mop2, Mop::Mop3];

    pub fn number(self) -> u8 {
        match self {
            Mop::Mop1 => 1,
            Mop::Mop2 => 2,
            Mop::Mop3 => 3,
        }
    }

    pub fn uses_u1(self) -> bool {
        matches!(self, Mop::Mop1 | Mop::Mop2)
    }

    pub fn uses_u2(self) -> bool {
        matches!(self, Mop::Mop1 | Mop::Mop3)
    }
}

impl fmt::Display for Mop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MOP{}", self.number())
    }
}

impl FromStr for Mop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().trim_start_matches("MOP") {
            "1" => Ok(Mop::Mop1),
            "2" => Ok(Mop::Mop2),
            "3" => Ok(Mop::Mop3),
            _ => Err(Error::invalid("scenario", format!("expected 1, 2 or 3, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed excess `f2 - ε`.
    pub constraint: f64,
    /// Projected-gradient tolerance, relative to `max(1, |f1|)`.
    pub stationarity: f64,
    /// Steps shorter than this (∞-norm) count as stalled.
    pub step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { constraint: 1e-6, stationarity: 1e-5, step: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Maximum number of model simulations (full or partial) per subproblem.
    pub budget: usize,
    pub tolerances: Tolerances,
    /// Relative forward-difference step.
    pub fd_step: f64,
    pub max_outer_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            budget: 50_000,
            tolerances: Tolerances::default(),
            fd_step: 1e-6,
            max_outer_iterations: 40,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be at least 1"));
        }
        let t = &self.tolerances;
        for (name, v) in [("constraint", t.constraint), ("stationarity", t.stationarity), ("step", t.step), ("fd_step", self.fd_step)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("tolerance `{name}`"), format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to solve one ε-constrained problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    pub mop: Mop,
    pub epsilon: f64,
    pub grid: TimeGrid,
    pub params: Parameters,
    pub initial_state: StateVector,
    /// Starting schedule; entries of inactive controls are ignored.
    pub initial_guess: ControlGrid,
    /// Starting multiplier of the effort constraint, in units of `f1` per unit `f2`.
    pub initial_multiplier: Option<f64>,
    pub settings: SolverSettings,
}

impl SubproblemSpec {
    /// Default initial state, cold start from zero controls, default settings.
    pub fn new(mop: Mop, epsilon: f64, grid: TimeGrid, params: Parameters) -> Self {
        SubproblemSpec {
            mop,
            epsilon,
            grid,
            params,
            initial_state: initial_state(&params),
            initial_guess: ControlGrid::zeros(&grid),
            initial_multiplier: None,
            settings: SolverSettings::default(),
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.mop, self.grid.n_nodes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    BudgetExhausted,
    /// Line search or outer loop made no further progress.
    Stalled,
    /// `ε < 0`: no admissible schedule satisfies the constraint.
    Infeasible,
    /// The model could not be evaluated.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub controls: ControlGrid,
    pub trajectory: Trajectory,
    pub objectives: ObjectivePair,
    pub status: SolveStatus,
    pub evaluations: usize,
    /// `max(0, f2 - ε)`.
    pub constraint_violation: f64,
    /// Final multiplier estimate, in units of `f1` per unit `f2`.
    pub multiplier: f64,
    pub outer_iterations: usize,
    pub diagnostics: String,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Burden `f1` and its forward-difference gradient over the free decision
/// variables of `spec.mop` (node-major; `(u1, u2)` pairs for MOP1).
pub fn objective_and_gradient(decision: &ControlGrid, spec: &SubproblemSpec) -> Result<(f64, Vec<f64>)> {
    if decision.len() != spec.grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: spec.grid.n_nodes(), found: decision.len() });
    }
    let layout = spec.layout();
    let mut ev = Evaluator::new(spec, layout, usize::MAX, 1.0);
    let x = layout.pack(decision.nodes());
    let run = |ev: &mut Evaluator<'_>| -> std::result::Result<Point, Stop> {
        let mut p = ev.evaluate(&x)?;
        ev.gradient(&mut p)?;
        Ok(p)
    };
    match run(&mut ev) {
        Ok(p) => {
            let grad = p.grad_f.expect("gradient was computed");
            Ok((p.f1, grad))
        }
        Err(Stop::Model(e)) => Err(e),
        Err(Stop::Budget) => unreachable!("unbounded budget"),
    }
}

/// Augmented-Lagrangian state for `c(x) = f2(x) - ε <= 0` (scaled units).
#[derive(Debug, Clone, Copy)]
struct Penalty {
    lambda: f64,
    rho: f64,
    epsilon: f64,
}

impl Penalty {
    fn shifted(&self, p: &Point) -> f64 {
        self.lambda + self.rho * (p.f2 - self.epsilon)
    }

    fn merit(&self, p: &Point, scale: f64) -> f64 {
        let s = self.shifted(p).max(0.0);
        p.f1 / scale + (s * s - self.lambda * self.lambda) / (2.0 * self.rho)
    }

    fn gradient(&self, p: &Point, weights: &[f64]) -> Vec<f64> {
        let mu = self.shifted(p).max(0.0);
        let gf = p.grad_f.as_ref().expect("gradient available");
        gf.iter()
            .zip(&p.x)
            .zip(weights)
            .map(|((g, x), w)| g + mu * 2.0 * w * x)
            .collect()
    }
}

enum InnerOutcome {
    Stationary,
    IterationLimit,
    Stalled,
}

struct Solver<'a> {
    spec: &'a SubproblemSpec,
    ev: Evaluator<'a>,
    layout: Layout,
    bfgs: Bfgs,
    best_feasible: Option<Point>,
    iterations: usize,
}

impl<'a> Solver<'a> {
    fn record(&mut self, p: &Point) {
        if p.f2 - self.spec.epsilon <= self.spec.settings.tolerances.constraint
            && self.best_feasible.as_ref().is_none_or(|b| p.f1 < b.f1)
        {
            self.best_feasible = Some(p.clone());
        }
    }

    /// Projected quasi-Newton on the augmented Lagrangian.
    fn inner(
        &mut self,
        mut point: Point,
        pen: &Penalty,
        omega: f64,
        max_iters: usize,
    ) -> std::result::Result<(Point, InnerOutcome), (Point, Stop)> {
        let n = self.layout.len();
        let scale = self.ev.scale;
        for _ in 0..max_iters {
            let g = pen.gradient(&point, &self.ev.weights);
            let pg = projected_gradient_norm(&self.layout, &point.x, &g);
            if pg <= omega {
                return Ok((point, InnerOutcome::Stationary));
            }
            self.iterations += 1;

            let shifted = pen.shifted(&point);
            let mu = shifted.max(0.0);
            let a: Vec<f64> = point.x.iter().zip(&self.ev.weights).map(|(x, w)| 2.0 * w * x).collect();
            let hess = ModelHessian {
                bfgs: &self.bfgs,
                diag: self.ev.weights.iter().map(|w| 2.0 * mu * w).collect(),
                rank_one: (shifted > 0.0).then_some((pen.rho, a.as_slice())),
            };
            let y = solve_model(&self.layout, &point.x, &g, &hess, 1e-3 * pg, 400);
            let mut d: Vec<f64> = y.iter().zip(&point.x).map(|(a, b)| a - b).collect();
            let mut gd = dot(&g, &d);
            if !(gd < 0.0) {
                // Model step unusable; fall back to a projected-gradient step.
                let l = hess.spectral_estimate(n).max(1e-12);
                let mut z: Vec<f64> = point.x.iter().zip(&g).map(|(x, gi)| x - gi / l).collect();
                self.layout.project(&mut z);
                d = z.iter().zip(&point.x).map(|(a, b)| a - b).collect();
                gd = dot(&g, &d);
                if !(gd < 0.0) {
                    return Ok((point, InnerOutcome::Stalled));
                }
            }
            if inf_norm(&d) <= self.spec.settings.tolerances.step {
                return Ok((point, InnerOutcome::Stalled));
            }

            let merit0 = pen.merit(&point, scale);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut trial: Vec<f64> = point.x.iter().zip(&d).map(|(x, di)| x + alpha * di).collect();
                self.layout.project(&mut trial);
                let cand = match self.ev.evaluate(&trial) {
                    Ok(c) => c,
                    Err(stop) => return Err((point, stop)),
                };
                let m = pen.merit(&cand, scale);
                if m <= merit0 + 1e-4 * alpha * gd {
                    accepted = Some(cand);
                    break;
                }
                // Safeguarded quadratic interpolation of the merit along d.
                let denom = 2.0 * (m - merit0 - alpha * gd);
                let next = if denom > 0.0 { -gd * alpha * alpha / denom } else { 0.5 * alpha };
                alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
                if alpha * inf_norm(&d) <= self.spec.settings.tolerances.step {
                    break;
                }
            }
            let Some(mut next) = accepted else {
                return Ok((point, InnerOutcome::Stalled));
            };
            if let Err(stop) = self.ev.gradient(&mut next) {
                return Err((point, stop));
            }
            let s: Vec<f64> = next.x.iter().zip(&point.x).map(|(a, b)| a - b).collect();
            let yk: Vec<f64> = {
                let (g1, g0) = (next.grad_f.as_ref().unwrap(), point.grad_f.as_ref().unwrap());
                g1.iter().zip(g0).map(|(a, b)| a - b).collect()
            };
            self.bfgs.update(&s, &yk);
            self.record(&next);
            point = next;
        }
        Ok((point, InnerOutcome::IterationLimit))
    }
}

/// Solves one ε-constraint subproblem.
///
/// Never fails on solver trouble: non-convergence, budget exhaustion and
/// infeasibility are reported in [`Solution::status`]. Errors are returned
/// only for malformed input.
pub fn solve_subproblem(spec: &SubproblemSpec) -> Result<Solution> {
    spec.settings.validate()?;
    if spec.initial_guess.len() != spec.grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: spec.grid.n_nodes(), found: spec.initial_guess.len() });
    }
    if !spec.epsilon.is_finite() && !(spec.epsilon == f64::INFINITY) {
        return Err(Error::invalid("epsilon", "must be a number"));
    }
    let layout = spec.layout();

    // f2 is a positive-definite quadratic in the node values, so ε = 0 admits
    // only the zero schedule and ε < 0 admits nothing.
    if spec.epsilon <= 0.0 {
        let mut ev = Evaluator::new(spec, layout, spec.settings.budget, 1.0);
        let zero = vec![0.0; layout.len()];
        let point = match ev.evaluate(&zero) {
            Ok(p) => p,
            Err(Stop::Model(e)) => return Ok(failed(spec, &layout, ev.evals, e)),
            Err(Stop::Budget) => unreachable!("budget is at least one"),
        };
        let (status, diagnostics) = if spec.epsilon == 0.0 {
            (SolveStatus::Converged, "ε = 0 admits only the zero schedule".to_string())
        } else {
            (SolveStatus::Infeasible, format!("ε = {} < 0: no admissible schedule", spec.epsilon))
        };
        return Ok(finish(spec, &layout, point, ev.evals, status, 0.0, 0, diagnostics));
    }

    // One simulation is reserved for the final feasibility restoration.
    let limit = spec.settings.budget.saturating_sub(1).max(1);
    let mut ev = Evaluator::new(spec, layout, limit, 1.0);
    let mut x0 = layout.pack(spec.initial_guess.nodes());
    layout.project(&mut x0);

    let mut point = match ev.evaluate(&x0) {
        Ok(p) => p,
        Err(Stop::Model(e)) => return Ok(failed(spec, &layout, ev.evals, e)),
        Err(Stop::Budget) => unreachable!("limit is at least one"),
    };
    ev.scale = point.f1.abs().max(1.0);
    let n = layout.len();
    let mut solver = Solver {
        spec,
        bfgs: Bfgs::new(n, 1e-6),
        ev,
        layout,
        best_feasible: None,
        iterations: 0,
    };
    solver.record(&point);

    let tol = spec.settings.tolerances;
    let mut status = SolveStatus::Stalled;
    let mut diagnostics = String::new();
    let mut outer = 0;
    let mut pen = Penalty { lambda: 0.0, rho: 10.0, epsilon: spec.epsilon };

    let run = (|| -> std::result::Result<(), (Point, Stop)> {
        if let Err(stop) = solver.ev.gradient(&mut point) {
            return Err((point.clone(), stop));
        }
        let scale = solver.ev.scale;
        pen.lambda = match spec.initial_multiplier {
            Some(m) => (m / scale).max(0.0),
            None => {
                let gf = point.grad_f.as_ref().unwrap();
                let a: Vec<f64> = point.x.iter().zip(&solver.ev.weights).map(|(x, w)| 2.0 * w * x).collect();
                let aa = dot(&a, &a);
                if aa > 0.0 { (-dot(gf, &a) / aa).max(0.0) } else { 0.0 }
            }
        };
        let mut omega = 1e-3f64.max(tol.stationarity);
        let mut prev_v = f64::INFINITY;
        while outer < spec.settings.max_outer_iterations {
            outer += 1;
            let (p, outcome) = solver.inner(point.clone(), &pen, omega, 500)?;
            point = p;
            let c = point.f2 - spec.epsilon;
            let v = c.max(-pen.lambda / pen.rho).abs();
            let stationary = matches!(outcome, InnerOutcome::Stationary) && omega <= tol.stationarity;
            pen.lambda = (pen.lambda + pen.rho * c).max(0.0);
            if stationary && c <= tol.constraint && v <= tol.constraint {
                status = SolveStatus::Converged;
                diagnostics = format!("converged after {outer} outer iterations");
                return Ok(());
            }
            if matches!(outcome, InnerOutcome::Stalled) && omega <= tol.stationarity && c <= tol.constraint {
                // Finite-difference noise floor reached before the tolerance.
                let g = pen.gradient(&point, &solver.ev.weights);
                let pg = projected_gradient_norm(&solver.layout, &point.x, &g);
                diagnostics = format!("line search stalled at projected gradient {pg:.3e}");
            }
            if v > 0.25 * prev_v {
                pen.rho = (pen.rho * 10.0).min(1e12);
            }
            prev_v = v;
            omega = (omega * 0.1).max(tol.stationarity);
        }
        if diagnostics.is_empty() {
            diagnostics = format!("outer iteration limit ({}) reached", spec.settings.max_outer_iterations);
        }
        Ok(())
    })();

    let evals_before = solver.ev.evals;
    match run {
        Ok(()) => {}
        Err((p, Stop::Budget)) => {
            point = p;
            status = SolveStatus::BudgetExhausted;
            diagnostics = format!("evaluation budget {} exhausted", spec.settings.budget);
        }
        Err((_, Stop::Model(e))) => return Ok(failed(spec, &layout, evals_before, e)),
    }

    let multiplier = pen.lambda * solver.ev.scale;
    let iterations = solver.iterations;
    let mut chosen = if status == SolveStatus::Converged {
        point
    } else {
        solver.best_feasible.take().unwrap_or(point)
    };

    // Restore exact feasibility by radial scaling: f2 is homogeneous of degree
    // two and the admissible set is star-shaped about zero.
    if chosen.f2 > spec.epsilon {
        let factor = (spec.epsilon / chosen.f2).sqrt();
        let x: Vec<f64> = chosen.x.iter().map(|v| v * factor).collect();
        solver.ev.limit = spec.settings.budget;
        match solver.ev.evaluate(&x) {
            Ok(p) => chosen = p,
            Err(Stop::Model(e)) => return Ok(failed(spec, &layout, solver.ev.evals, e)),
            Err(Stop::Budget) => {}
        }
    }
    let evals = solver.ev.evals;
    Ok(finish(spec, &layout, chosen, evals, status, multiplier, outer, format!("{diagnostics}; {iterations} inner iterations")))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &SubproblemSpec,
    layout: &Layout,
    point: Point,
    evaluations: usize,
    status: SolveStatus,
    multiplier: f64,
    outer_iterations: usize,
    diagnostics: String,
) -> Solution {
    let controls = ControlGrid::from_nodes_unchecked(layout.unpack(&point.x));
    let trajectory = Trajectory { grid: spec.grid, states: point.states, controls: controls.clone() };
    Solution {
        controls,
        trajectory,
        objectives: ObjectivePair { f1: point.f1, f2: point.f2 },
        status,
        evaluations,
        constraint_violation: (point.f2 - spec.epsilon).max(0.0),
        multiplier,
        outer_iterations,
        diagnostics,
    }
}

fn failed(spec: &SubproblemSpec, layout: &Layout, evaluations: usize, err: Error) -> Solution {
    let controls = ControlGrid::from_nodes_unchecked(layout.unpack(&vec![0.0; layout.len()]));
    let mut states = vec![StateVector([f64::NAN; 11]); spec.grid.n_nodes()];
    states[0] = spec.initial_state;
    Solution {
        trajectory: Trajectory {
            grid: spec.grid,
            states,
            controls: controls.clone(),
        },
        controls,
        objectives: ObjectivePair { f1: f64::NAN, f2: 0.0 },
        status: SolveStatus::Failed,
        evaluations,
        constraint_violation: 0.0,
        multiplier: 0.0,
        outer_iterations: 0,
        diagnostics: format!("model evaluation failed: {err}"),
    }
}

#[cfg(test)]
mod tests;
