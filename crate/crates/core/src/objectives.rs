//! The two competing objectives and the weighted single-objective functional.
//!
//! `f1` is the AIDS burden `∫ (A + A_T) dt`, `f2` the treatment effort
//! `∫ (u1² + u2²) dt`. Both use the trapezoidal rule on the simulation grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Compartment, StateVector};
use crate::simulate::{trapezoid, ControlGrid, TimeGrid, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePair {
    pub f1: f64,
    pub f2: f64,
}

/// Relative cost weights of the weighted functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedObjectiveConfig {
    pub w1: f64,
    pub w2: f64,
}

impl WeightedObjectiveConfig {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(w1 > 0.0 && w2 > 0.0) {
            return Err(Error::invalid("weights", format!("must be positive, got ({w1}, {w2})")));
        }
        Ok(WeightedObjectiveConfig { w1, w2 })
    }
}

fn check_trajectory(traj: &Trajectory, grid: &TimeGrid) -> Result<()> {
    if traj.states.len() != grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: grid.n_nodes(), found: traj.states.len() });
    }
    Ok(())
}

pub(crate) fn burden_samples_of(states: &[StateVector]) -> Vec<f64> {
    states.iter().map(|s| s[Compartment::A] + s[Compartment::AT]).collect()
}

pub fn eval_f1(traj: &Trajectory, grid: &TimeGrid) -> Result<f64> {
    check_trajectory(traj, grid)?;
    trapezoid(&burden_samples_of(&traj.states), grid)
}

pub fn eval_f2(controls: &ControlGrid, grid: &TimeGrid) -> Result<f64> {
    let samples: Vec<f64> = controls.nodes().iter().map(|c| c.u1 * c.u1 + c.u2 * c.u2).collect();
    trapezoid(&samples, grid)
}

/// Both objectives for a simulated schedule.
pub fn eval_pair(traj: &Trajectory, grid: &TimeGrid) -> Result<ObjectivePair> {
    Ok(ObjectivePair { f1: eval_f1(traj, grid)?, f2: eval_f2(&traj.controls, grid)? })
}

/// `∂f2/∂u_j = 2 w_j u_j` with `w_j` the trapezoid weight of node `j`,
/// returned as `(∂/∂u1_j, ∂/∂u2_j)` per node.
pub fn f2_gradient(controls: &ControlGrid, grid: &TimeGrid) -> Result<Vec<(f64, f64)>> {
    if controls.len() != grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: grid.n_nodes(), found: controls.len() });
    }
    Ok(controls
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let w = grid.trapezoid_weight(j);
            (2.0 * w * c.u1, 2.0 * w * c.u2)
        })
        .collect())
}

/// `∫ (A + A_T + w1 u1² + w2 u2²) dt`.
pub fn eval_weighted_j(
    traj: &Trajectory,
    controls: &ControlGrid,
    grid: &TimeGrid,
    cfg: &WeightedObjectiveConfig,
) -> Result<f64> {
    check_trajectory(traj, grid)?;
    if controls.len() != grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: grid.n_nodes(), found: controls.len() });
    }
    let samples: Vec<f64> = traj
        .states
        .iter()
        .zip(controls.nodes())
        .map(|(s, c)| s[Compartment::A] + s[Compartment::AT] + cfg.w1 * c.u1 * c.u1 + cfg.w2 * c.u2 * c.u2)
        .collect();
    trapezoid(&samples, grid)
}
