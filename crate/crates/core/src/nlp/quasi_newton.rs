//! Dense damped BFGS and the quadratic-model subproblem over the admissible set.
//!
//! The model Hessian is structured: a BFGS approximation of the burden term
//! plus the exactly known curvature of the penalty on the effort constraint
//! (a diagonal part and, while the penalty is active, a rank-one part).

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};

use super::projection::Layout;
use crate::model::U_MAX;

/// Dense, symmetric positive-definite BFGS matrix with Powell damping.
#[derive(Debug, Clone)]
pub(crate) struct Bfgs {
    n: usize,
    mat: Vec<f64>,
    /// Whether the initial diagonal was rescaled from a curvature pair.
    scaled: bool,
}

impl Bfgs {
    pub fn new(n: usize, diag: f64) -> Self {
        let mut mat = vec![0.0; n * n];
        for i in 0..n {
            mat[i * n + i] = diag;
        }
        Bfgs { n, mat, scaled: false }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.mat[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// Damped update with step `s` and gradient change `y`. Returns false if skipped.
    ///
    /// Pairs whose damped `r` is nearly orthogonal to `s` are skipped, since
    /// `|r|² / sᵀr` would be unbounded.
    pub fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        let n = self.n;
        if !self.scaled {
            let (sy, yy) = (dot(s, y), dot(y, y));
            if sy > 1e-2 * dot(s, s).sqrt() * yy.sqrt() {
                *self = Bfgs::new(n, yy / sy);
                self.scaled = true;
            }
        }
        let mut bs = vec![0.0; n];
        self.apply(s, &mut bs);
        let sbs: f64 = dot(s, &bs);
        if !(sbs > 1e-300) || !sbs.is_finite() {
            return false;
        }
        let sy = dot(s, y);
        let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
        let r: Vec<f64> = y.iter().zip(&bs).map(|(yi, bi)| theta * yi + (1.0 - theta) * bi).collect();
        let sr = dot(s, &r);
        if !(sr > 0.0) || !sr.is_finite() || sr < 1e-2 * dot(s, s).sqrt() * dot(&r, &r).sqrt() {
            return false;
        }
        for i in 0..n {
            for j in 0..n {
                self.mat[i * n + j] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
            }
        }
        true
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `B = bfgs + diag + rho * a aᵀ`.
pub(crate) struct ModelHessian<'a> {
    pub bfgs: &'a Bfgs,
    pub diag: Vec<f64>,
    pub rank_one: Option<(f64, &'a [f64])>,
}

impl ModelHessian<'_> {
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.bfgs.apply(v, out);
        for ((o, d), vi) in out.iter_mut().zip(&self.diag).zip(v) {
            *o += d * vi;
        }
        if let Some((rho, a)) = self.rank_one {
            let k = rho * dot(a, v);
            for (o, ai) in out.iter_mut().zip(a) {
                *o += k * ai;
            }
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut v = self.bfgs.mat[i * self.bfgs.n + j];
        if i == j {
            v += self.diag[i];
        }
        if let Some((rho, a)) = self.rank_one {
            v += rho * a[i] * a[j];
        }
        v
    }

    /// Largest-eigenvalue estimate from a few power iterations.
    pub fn spectral_estimate(&self, n: usize) -> f64 {
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut w = vec![0.0; n];
        let mut est = 0.0;
        for _ in 0..8 {
            self.apply(&v, &mut w);
            let norm = dot(&w, &w).sqrt();
            if !(norm > 0.0) {
                return 0.0;
            }
            est = norm;
            v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / norm);
        }
        est
    }
}

/// Projected-gradient stationarity measure `‖P(x - g) - x‖∞`.
pub(crate) fn projected_gradient_norm(layout: &Layout, x: &[f64], g: &[f64]) -> f64 {
    let mut z: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    layout.project(&mut z);
    z.iter().zip(x).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Free directions of the face of the admissible set containing `y`: one
/// column per direction, each with at most two nonzeros `(index, coef)`.
pub(crate) fn face_columns(layout: &Layout, y: &[f64]) -> Vec<[(usize, f64); 2]> {
    const TOL: f64 = 1e-12;
    let mut cols = Vec::with_capacity(y.len());
    match layout.per_node() {
        1 => {
            for (k, v) in y.iter().enumerate() {
                if *v > TOL && *v < U_MAX - TOL {
                    cols.push([(k, 1.0), (k, 0.0)]);
                }
            }
        }
        _ => {
            for k in (0..y.len()).step_by(2) {
                let (a, b) = (y[k], y[k + 1]);
                let lower_a = a <= TOL;
                let lower_b = b <= TOL;
                let upper = a + b >= U_MAX - TOL;
                match (lower_a, lower_b, upper) {
                    (false, false, false) => {
                        cols.push([(k, 1.0), (k, 0.0)]);
                        cols.push([(k + 1, 1.0), (k + 1, 0.0)]);
                    }
                    (true, false, false) => cols.push([(k + 1, 1.0), (k + 1, 0.0)]),
                    (false, true, false) => cols.push([(k, 1.0), (k, 0.0)]),
                    (false, false, true) => cols.push([(k, FRAC_1_SQRT_2), (k + 1, -FRAC_1_SQRT_2)]),
                    _ => {}
                }
            }
        }
    }
    cols
}

/// Approximately minimizes `q(y) = gᵀ(y - x) + ½ (y - x)ᵀ B (y - x)` over the
/// admissible set.
///
/// Each iteration takes a Cauchy step along the projected-gradient path to
/// pick a face, minimizes `q` exactly on that face by a dense Cholesky solve,
/// and returns to the admissible set by a projected search.
pub(crate) fn solve_model(
    layout: &Layout,
    x: &[f64],
    g: &[f64],
    hess: &ModelHessian<'_>,
    tol: f64,
    max_iters: usize,
) -> Vec<f64> {
    let n = x.len();
    let mut scratch = vec![0.0; n];
    let mut model = |y: &[f64], grad: Option<&mut Vec<f64>>| -> f64 {
        let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        hess.apply(&d, &mut scratch);
        if let Some(grad) = grad {
            grad.iter_mut().zip(g).zip(&scratch).for_each(|((o, gi), bi)| *o = gi + bi);
        }
        dot(g, &d) + 0.5 * dot(&d, &scratch)
    };
    let inv_lip = {
        let l = hess.spectral_estimate(n);
        if l > 0.0 { 1.0 / l } else { 1.0 }
    };

    let mut y = x.to_vec();
    let mut grad = g.to_vec();
    let mut qy = 0.0;
    for _ in 0..max_iters {
        if projected_gradient_norm(layout, &y, &grad) <= tol {
            break;
        }
        // Cauchy point.
        let mut alpha = inv_lip;
        let mut cauchy = None;
        for _ in 0..40 {
            let mut z: Vec<f64> = y.iter().zip(&grad).map(|(a, b)| a - alpha * b).collect();
            layout.project(&mut z);
            let slope: f64 = grad.iter().zip(z.iter().zip(&y)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let qz = model(&z, None);
            if qz <= qy + 1e-4 * slope && slope < 0.0 {
                cauchy = Some((z, qz));
                break;
            }
            alpha *= 0.5;
        }
        let Some((z, qz)) = cauchy else { break };

        // Face minimization.
        let mut best = (z.clone(), qz);
        let cols = face_columns(layout, &z);
        if !cols.is_empty() {
            let mut gz = vec![0.0; n];
            model(&z, Some(&mut gz));
            let m = cols.len();
            let reduced = DMatrix::from_fn(m, m, |a, b| {
                let mut acc = 0.0;
                for &(i, ci) in &cols[a] {
                    for &(j, cj) in &cols[b] {
                        acc += ci * cj * hess.entry(i, j);
                    }
                }
                acc
            });
            let rhs = DVector::from_iterator(m, cols.iter().map(|c| -c.iter().map(|&(i, ci)| ci * gz[i]).sum::<f64>()));
            if let Some(v) = reduced.cholesky().map(|ch| ch.solve(&rhs)) {
                let mut step = vec![0.0; n];
                for (col, vk) in cols.iter().zip(v.iter()) {
                    for &(i, ci) in col {
                        step[i] += ci * vk;
                    }
                }
                let mut t = 1.0;
                for _ in 0..30 {
                    let mut w: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                    layout.project(&mut w);
                    let qw = model(&w, None);
                    if qw < best.1 {
                        best = (w, qw);
                        break;
                    }
                    t *= 0.5;
                }
            }
        }
        let moved = best.0.iter().zip(&y).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        y = best.0;
        qy = model(&y, Some(&mut grad));
        if moved <= 1e-15 {
            break;
        }
    }
    y
}
