//! Counted model evaluations and finite-difference gradients.

use crate::error::Error;
use crate::model::{ControlValue, StateVector};
use crate::objectives::burden_samples_of;
use crate::simulate::{propagate_from, trapezoid_unchecked};

use super::projection::Layout;
use super::SubproblemSpec;

pub(crate) enum Stop {
    Budget,
    Model(Error),
}

/// An evaluated decision vector.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub x: Vec<f64>,
    pub f1: f64,
    pub f2: f64,
    pub states: Vec<StateVector>,
    /// Gradient of `f1 / scale`, once computed.
    pub grad_f: Option<Vec<f64>>,
}

pub(crate) struct Evaluator<'a> {
    spec: &'a SubproblemSpec,
    layout: Layout,
    pub evals: usize,
    pub limit: usize,
    /// `f1` is divided by this inside the optimizer.
    pub scale: f64,
    /// Trapezoid weight of every decision variable.
    pub weights: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a SubproblemSpec, layout: Layout, limit: usize, scale: f64) -> Self {
        let weights = layout.quadrature_weights(spec.grid.step());
        Evaluator { spec, layout, evals: 0, limit, scale, weights }
    }

    fn charge(&mut self) -> Result<(), Stop> {
        if self.evals >= self.limit {
            return Err(Stop::Budget);
        }
        self.evals += 1;
        Ok(())
    }

    fn effort(&self, controls: &[ControlValue]) -> f64 {
        let samples: Vec<f64> = controls.iter().map(|c| c.u1 * c.u1 + c.u2 * c.u2).collect();
        trapezoid_unchecked(&samples, self.spec.grid.step())
    }

    fn burden(&self, states: &[StateVector]) -> f64 {
        trapezoid_unchecked(&burden_samples_of(states), self.spec.grid.step())
    }

    /// Full simulation at `x`.
    pub fn evaluate(&mut self, x: &[f64]) -> Result<Point, Stop> {
        self.charge()?;
        let controls = self.layout.unpack(x);
        let mut states = vec![self.spec.initial_state; self.spec.grid.n_nodes()];
        propagate_from(&mut states, 0, &controls, &self.spec.grid, &self.spec.params).map_err(Stop::Model)?;
        Ok(Point {
            x: x.to_vec(),
            f1: self.burden(&states),
            f2: self.effort(&controls),
            states,
            grad_f: None,
        })
    }

    /// Forward differences of `f1 / scale`, one partial re-simulation per
    /// free variable. A perturbation of node `j` first influences the step
    /// leaving node `j - 1`, so integration restarts there.
    pub fn gradient(&mut self, p: &mut Point) -> Result<(), Stop> {
        let mut controls = self.layout.unpack(&p.x);
        let mut work = p.states.clone();
        let mut grad = vec![0.0; p.x.len()];
        let base_step = self.spec.settings.fd_step;
        for (k, &xk) in p.x.iter().enumerate() {
            self.charge()?;
            let start = self.layout.node_of(k).saturating_sub(1);
            let bumped = xk + base_step.max(base_step * xk.abs());
            let delta = bumped - xk;
            self.layout.set(&mut controls, k, bumped);
            work[..=start].copy_from_slice(&p.states[..=start]);
            propagate_from(&mut work, start, &controls, &self.spec.grid, &self.spec.params).map_err(Stop::Model)?;
            self.layout.set(&mut controls, k, xk);
            grad[k] = (self.burden(&work) - p.f1) / delta / self.scale;
        }
        p.grad_f = Some(grad);
        Ok(())
    }
}
