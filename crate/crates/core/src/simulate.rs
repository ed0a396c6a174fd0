//! Fixed-step RK4 propagation on a uniform grid and trapezoidal quadrature.
//!
//! Controls live on the grid nodes and are linearly interpolated in between,
//! so the RK4 mid-stage of interval `j` sees the average of nodes `j` and
//! `j + 1`. States are kept at nodes only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rhs, ControlValue, Parameters, StateVector};

/// Uniform grid `t_j = j T / n` for `j = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_intervals: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_intervals: usize) -> Result<Self> {
        if n_intervals == 0 {
            return Err(Error::invalid("time grid", "needs at least one interval"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("time grid", format!("horizon must be positive, got {horizon}")));
        }
        Ok(TimeGrid { horizon, n_intervals })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn n_nodes(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_intervals as f64
    }

    /// `T j / n`, so node times print as the decimals one expects.
    pub fn time(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.n_intervals as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|j| self.time(j))
    }

    /// Trapezoid weights: `h/2` at the ends, `h` inside.
    pub fn trapezoid_weight(&self, j: usize) -> f64 {
        let h = self.step();
        if j == 0 || j == self.n_intervals {
            0.5 * h
        } else {
            h
        }
    }
}

/// Node values of both controls; the decision variable of the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    nodes: Vec<ControlValue>,
}

impl ControlGrid {
    /// Builds a grid after checking every node is admissible (to `1e-12`).
    pub fn new(nodes: Vec<ControlValue>) -> Result<Self> {
        if let Some(bad) = nodes.iter().find(|c| !c.is_admissible(1e-12)) {
            return Err(Error::InadmissibleControl { u1: bad.u1, u2: bad.u2 });
        }
        Ok(ControlGrid { nodes })
    }

    pub(crate) fn from_nodes_unchecked(nodes: Vec<ControlValue>) -> Self {
        ControlGrid { nodes }
    }

    pub fn zeros(grid: &TimeGrid) -> Self {
        ControlGrid { nodes: vec![ControlValue::ZERO; grid.n_nodes()] }
    }

    pub fn constant(grid: &TimeGrid, value: ControlValue) -> Result<Self> {
        ControlGrid::new(vec![value; grid.n_nodes()])
    }

    pub fn nodes(&self) -> &[ControlValue] {
        &self.nodes
    }

    #[cfg(test)]
    pub(crate) fn nodes_mut(&mut self) -> &mut [ControlValue] {
        &mut self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Linear interpolation at time `t`, clamped to `[0, T]`.
    pub fn at(&self, grid: &TimeGrid, t: f64) -> ControlValue {
        let n = grid.n_intervals();
        let x = (t / grid.step()).clamp(0.0, n as f64);
        let j = (x.floor() as usize).min(n - 1);
        let frac = x - j as f64;
        let (a, b) = (self.nodes[j], self.nodes[j + 1]);
        ControlValue {
            u1: (1.0 - frac) * a.u1 + frac * b.u1,
            u2: (1.0 - frac) * a.u2 + frac * b.u2,
        }
    }

    fn check_aligned(&self, grid: &TimeGrid) -> Result<()> {
        if self.nodes.len() != grid.n_nodes() {
            return Err(Error::LengthMismatch { expected: grid.n_nodes(), found: self.nodes.len() });
        }
        Ok(())
    }
}

/// Node states produced by [`simulate`], together with the schedule that drove them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<StateVector>,
    pub controls: ControlGrid,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectories hold at least the initial state")
    }

    pub fn min_component(&self) -> f64 {
        self.states.iter().map(StateVector::min_component).fold(f64::INFINITY, f64::min)
    }

    /// Nonnegativity up to the given absolute slack (e.g. `-1e-9`).
    pub fn is_nonnegative(&self, slack: f64) -> bool {
        self.min_component() >= slack
    }
}

/// One classical RK4 step for an arbitrary fixed-size system.
pub fn rk4_step_with<const N: usize, F>(y: &[f64; N], t: f64, h: f64, mut f: F) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let axpy = |a: f64, k: &[f64; N]| -> [f64; N] { std::array::from_fn(|i| y[i] + a * k[i]) };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = f(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = f(t + h, &axpy(h, &k3))?;
    Ok(std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

/// One RK4 step of the coinfection model with controls sampled by `control_at`
/// at `t`, `t + h/2` and `t + h`.
pub fn rk4_step<C>(state: &StateVector, t: f64, h: f64, control_at: C, params: &Parameters) -> Result<StateVector>
where
    C: Fn(f64) -> ControlValue,
{
    if !(h > 0.0) {
        return Err(Error::invalid("step", format!("must be positive, got {h}")));
    }
    let stage_controls = [control_at(t), control_at(t + 0.5 * h), control_at(t + h)];
    model_step(state, h, stage_controls, params)
}

fn model_step(state: &StateVector, h: f64, [c0, cm, c1]: [ControlValue; 3], p: &Parameters) -> Result<StateVector> {
    let k1 = rhs(state, c0, p)?;
    let k2 = rhs(&axpy(state, 0.5 * h, &k1), cm, p)?;
    let k3 = rhs(&axpy(state, 0.5 * h, &k2), cm, p)?;
    let k4 = rhs(&axpy(state, h, &k3), c1, p)?;
    Ok(StateVector(std::array::from_fn(|i| {
        state.0[i] + h / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i])
    })))
}

fn axpy(y: &StateVector, a: f64, k: &StateVector) -> StateVector {
    StateVector(std::array::from_fn(|i| y.0[i] + a * k.0[i]))
}

/// Propagates node states `from..n` in place, assuming `states[from]` is set.
///
/// Shared by [`simulate`] and the optimizer's partial re-simulations so both
/// produce bit-identical states.
pub(crate) fn propagate_from(
    states: &mut [StateVector],
    from: usize,
    controls: &[ControlValue],
    grid: &TimeGrid,
    params: &Parameters,
) -> Result<()> {
    let h = grid.step();
    for j in from..grid.n_intervals() {
        let (a, b) = (controls[j], controls[j + 1]);
        let mid = ControlValue { u1: 0.5 * (a.u1 + b.u1), u2: 0.5 * (a.u2 + b.u2) };
        states[j + 1] = model_step(&states[j], h, [a, mid, b], params)
            .map_err(|e| Error::Simulation { node: j, source: Box::new(e) })?;
    }
    Ok(())
}

/// Integrates the model over the grid from `initial` under `controls`.
pub fn simulate(
    initial: &StateVector,
    controls: &ControlGrid,
    grid: &TimeGrid,
    params: &Parameters,
) -> Result<Trajectory> {
    controls.check_aligned(grid)?;
    let mut states = vec![*initial; grid.n_nodes()];
    propagate_from(&mut states, 0, controls.nodes(), grid, params)?;
    Ok(Trajectory { grid: *grid, states, controls: controls.clone() })
}

/// Composite trapezoidal rule over node samples.
pub fn trapezoid(samples: &[f64], grid: &TimeGrid) -> Result<f64> {
    if samples.len() != grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: grid.n_nodes(), found: samples.len() });
    }
    Ok(trapezoid_unchecked(samples, grid.step()))
}

pub(crate) fn trapezoid_unchecked(samples: &[f64], h: f64) -> f64 {
    let n = samples.len() - 1;
    let terms = std::iter::once(0.5 * samples[0]).chain(samples[1..n].iter().copied()).chain([0.5 * samples[n]]);
    h * compensated_sum(terms)
}

/// Neumaier summation: a constant integrand then sums to the correctly
/// rounded multiple instead of drifting by an ulp per node.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + carry
}
