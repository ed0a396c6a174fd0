//! Exact Euclidean projection onto the admissible control set, node by node.

use crate::model::{ControlValue, U_MAX};

use super::Mop;

/// Projects `(a, b)` onto the triangle `{u1, u2 >= 0, u1 + u2 <= 0.95}`.
///
/// The box bounds `u_i <= 0.95` are implied by the other three constraints,
/// so the admissible pair set is exactly this triangle.
pub fn project_pair(a: f64, b: f64) -> (f64, f64) {
    if a + b > U_MAX {
        // Nearest point lies on the hypotenuse segment.
        let t = 0.5 * (a + b - U_MAX);
        let (p, q) = (a - t, b - t);
        if p < 0.0 {
            (0.0, U_MAX)
        } else if q < 0.0 {
            (U_MAX, 0.0)
        } else {
            (p, U_MAX - p)
        }
    } else {
        (a.max(0.0).min(U_MAX), b.max(0.0).min(U_MAX))
    }
}

pub fn project_scalar(a: f64) -> f64 {
    a.clamp(0.0, U_MAX)
}

/// Maps between a full [`ControlValue`] schedule and the vector of free
/// decision variables of a scenario. Inactive controls are pinned at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub mop: Mop,
    pub n_nodes: usize,
}

impl Layout {
    pub fn new(mop: Mop, n_nodes: usize) -> Self {
        Layout { mop, n_nodes }
    }

    pub fn per_node(&self) -> usize {
        match self.mop {
            Mop::Mop1 => 2,
            Mop::Mop2 | Mop::Mop3 => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.per_node() * self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node index owning decision variable `k`.
    pub fn node_of(&self, k: usize) -> usize {
        k / self.per_node()
    }

    pub fn pack(&self, controls: &[ControlValue]) -> Vec<f64> {
        match self.mop {
            Mop::Mop1 => controls.iter().flat_map(|c| [c.u1, c.u2]).collect(),
            Mop::Mop2 => controls.iter().map(|c| c.u1).collect(),
            Mop::Mop3 => controls.iter().map(|c| c.u2).collect(),
        }
    }

    pub fn unpack_into(&self, x: &[f64], controls: &mut [ControlValue]) {
        match self.mop {
            Mop::Mop1 => {
                for (c, pair) in controls.iter_mut().zip(x.chunks_exact(2)) {
                    *c = ControlValue { u1: pair[0], u2: pair[1] };
                }
            }
            Mop::Mop2 => {
                for (c, &v) in controls.iter_mut().zip(x) {
                    *c = ControlValue { u1: v, u2: 0.0 };
                }
            }
            Mop::Mop3 => {
                for (c, &v) in controls.iter_mut().zip(x) {
                    *c = ControlValue { u1: 0.0, u2: v };
                }
            }
        }
    }

    pub fn unpack(&self, x: &[f64]) -> Vec<ControlValue> {
        let mut out = vec![ControlValue::ZERO; self.n_nodes];
        self.unpack_into(x, &mut out);
        out
    }

    /// Writes decision variable `k` into a schedule.
    pub fn set(&self, controls: &mut [ControlValue], k: usize, value: f64) {
        let node = &mut controls[self.node_of(k)];
        match (self.mop, k % self.per_node()) {
            (Mop::Mop1, 0) | (Mop::Mop2, _) => node.u1 = value,
            _ => node.u2 = value,
        }
    }

    pub fn project(&self, x: &mut [f64]) {
        match self.mop {
            Mop::Mop1 => {
                for pair in x.chunks_exact_mut(2) {
                    let (a, b) = project_pair(pair[0], pair[1]);
                    pair[0] = a;
                    pair[1] = b;
                }
            }
            Mop::Mop2 | Mop::Mop3 => x.iter_mut().for_each(|v| *v = project_scalar(*v)),
        }
    }

    /// Per-variable trapezoid weights `w_k`, so that `f2 = Σ w_k x_k²`.
    pub fn quadrature_weights(&self, h: f64) -> Vec<f64> {
        let last = self.n_nodes - 1;
        (0..self.len())
            .map(|k| {
                let j = self.node_of(k);
                if j == 0 || j == last {
                    0.5 * h
                } else {
                    h
                }
            })
            .collect()
    }
}
