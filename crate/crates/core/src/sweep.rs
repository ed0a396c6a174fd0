//! ε-constraint sweeps: the ε grid, the sequence of subproblems, and the
//! assembled discrete Pareto front with its optimal-surface view.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{initial_state, Compartment, Parameters, StateVector, U_MAX};
use crate::nlp::{solve_subproblem, Mop, SolveStatus, Solution, SolverSettings, SubproblemSpec};
use crate::objectives::ObjectivePair;
use crate::simulate::{ControlGrid, TimeGrid, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub mop: Mop,
    pub n_intervals: usize,
    pub n_front_points: usize,
    /// Carries the horizon `T`.
    pub params: Parameters,
    /// Replaces the tabulated initial condition when set.
    pub initial_state: Option<StateVector>,
    pub settings: SolverSettings,
}

impl Scenario {
    /// Reference setup: 100 intervals, 100 front points, default parameters.
    pub fn new(mop: Mop) -> Self {
        Scenario {
            mop,
            n_intervals: 100,
            n_front_points: 100,
            params: Parameters::default(),
            initial_state: None,
            settings: SolverSettings::default(),
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.params.horizon = horizon;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.params.horizon, self.n_intervals)
    }

    pub fn initial(&self) -> StateVector {
        self.initial_state.unwrap_or_else(|| initial_state(&self.params))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_front_points < 2 {
            return Err(Error::invalid("front points", format!("need at least 2, got {}", self.n_front_points)));
        }
        self.params.validate()?;
        self.settings.validate()?;
        self.grid()?;
        if let Some(s) = &self.initial_state {
            if s.0.iter().any(|v| !v.is_finite() || *v < 0.0) || !(s.total() > 0.0) {
                return Err(Error::invalid("initial state", "compartments must be nonnegative with a positive total"));
            }
        }
        Ok(())
    }

    fn subproblem(&self, epsilon: f64, grid: TimeGrid) -> SubproblemSpec {
        SubproblemSpec {
            mop: self.mop,
            epsilon,
            grid,
            params: self.params,
            initial_state: self.initial(),
            initial_guess: ControlGrid::zeros(&grid),
            initial_multiplier: None,
            settings: self.settings,
        }
    }
}

/// Upper end of the ε range: `0.95² T`, the effort of `u1 ≡ 0.95, u2 ≡ 0`.
///
/// The same value is used for every scenario so that fronts of different
/// scenarios share their ε grid.
pub fn max_effort(horizon: f64) -> f64 {
    U_MAX * U_MAX * horizon
}

/// `n_front_points` evenly spaced values over `[0, 0.95² T]`.
pub fn epsilon_grid(scenario: &Scenario) -> Vec<f64> {
    let top = max_effort(scenario.horizon());
    let last = (scenario.n_front_points - 1) as f64;
    (0..scenario.n_front_points)
        .map(|i| if i as f64 == last { top } else { top * i as f64 / last })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub epsilon: f64,
    pub objectives: ObjectivePair,
    pub controls: ControlGrid,
    pub trajectory: Trajectory,
    pub status: SolveStatus,
    pub evaluations: usize,
    pub constraint_violation: f64,
    pub multiplier: f64,
    pub diagnostics: String,
}

impl ParetoPoint {
    fn from_solution(epsilon: f64, s: Solution) -> Self {
        ParetoPoint {
            epsilon,
            objectives: s.objectives,
            controls: s.controls,
            trajectory: s.trajectory,
            status: s.status,
            evaluations: s.evaluations,
            constraint_violation: s.constraint_violation,
            multiplier: s.multiplier,
            diagnostics: s.diagnostics,
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Ascending ε, each subproblem warm-started from its predecessor.
    Sequential,
    /// Independent cold starts solved concurrently.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontMetadata {
    pub created_unix_seconds: u64,
    pub wall_seconds: f64,
    pub mode: SweepMode,
    /// SHA-256 of the JSON-serialized solver settings.
    pub settings_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    pub scenario: Scenario,
    /// Sorted by ε ascending.
    pub points: Vec<ParetoPoint>,
    pub metadata: FrontMetadata,
}

impl ParetoFront {
    /// Point with the smallest ε not below `target`.
    pub fn at_or_above(&self, target: f64) -> Option<(usize, &ParetoPoint)> {
        self.points.iter().enumerate().find(|(_, p)| p.epsilon >= target)
    }

    /// Point whose ε is closest to `target` (lower ε on ties).
    pub fn nearest(&self, target: f64) -> Option<(usize, &ParetoPoint)> {
        self.points.iter().enumerate().min_by(|a, b| {
            let da = (a.1.epsilon - target).abs();
            let db = (b.1.epsilon - target).abs();
            da.total_cmp(&db)
        })
    }

    pub fn converged_count(&self) -> usize {
        self.points.iter().filter(|p| p.converged()).count()
    }
}

pub fn settings_hash(settings: &SolverSettings) -> String {
    let json = serde_json::to_vec(settings).expect("settings serialize");
    hex::encode(Sha256::digest(&json))
}

/// Sequential warm-started sweep over [`epsilon_grid`].
pub fn sweep(scenario: &Scenario) -> Result<ParetoFront> {
    sweep_with_mode(scenario, SweepMode::Sequential)
}

pub fn sweep_with_mode(scenario: &Scenario, mode: SweepMode) -> Result<ParetoFront> {
    scenario.validate()?;
    let grid = scenario.grid()?;
    let epsilons = epsilon_grid(scenario);
    let started = Instant::now();
    let created_unix_seconds = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);

    let points = match mode {
        SweepMode::Sequential => {
            let mut points: Vec<ParetoPoint> = Vec::with_capacity(epsilons.len());
            for &eps in &epsilons {
                let mut spec = scenario.subproblem(eps, grid);
                if let Some(prev) = points.last().filter(|p| p.status != SolveStatus::Failed) {
                    spec.initial_guess = prev.controls.clone();
                    spec.initial_multiplier = Some(prev.multiplier);
                }
                let sol = solve_subproblem(&spec)?;
                points.push(ParetoPoint::from_solution(eps, sol));
            }
            points
        }
        SweepMode::Parallel => epsilons
            .par_iter()
            .map(|&eps| solve_subproblem(&scenario.subproblem(eps, grid)).map(|s| ParetoPoint::from_solution(eps, s)))
            .collect::<Result<Vec<_>>>()?,
    };

    Ok(ParetoFront {
        scenario: scenario.clone(),
        points,
        metadata: FrontMetadata {
            created_unix_seconds,
            wall_seconds: started.elapsed().as_secs_f64(),
            mode,
            settings_hash: settings_hash(&scenario.settings),
        },
    })
}

/// Quantities with an optimal surface over (ε, t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "u1")]
    U1,
    #[serde(rename = "u2")]
    U2,
    #[serde(rename = "u1+u2")]
    TotalControl,
    #[serde(rename = "A")]
    A,
    #[serde(rename = "A_T")]
    AT,
    #[serde(rename = "A+A_T")]
    Burden,
}

impl Quantity {
    pub const ALL: [Quantity; 6] =
        [Quantity::U1, Quantity::U2, Quantity::TotalControl, Quantity::A, Quantity::AT, Quantity::Burden];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::U1 => "u1",
            Quantity::U2 => "u2",
            Quantity::TotalControl => "u1+u2",
            Quantity::A => "A",
            Quantity::AT => "A_T",
            Quantity::Burden => "A+A_T",
        }
    }

    fn sample(self, point: &ParetoPoint, j: usize) -> f64 {
        let c = point.controls.nodes()[j];
        let s = &point.trajectory.states[j];
        match self {
            Quantity::U1 => c.u1,
            Quantity::U2 => c.u2,
            Quantity::TotalControl => c.u1 + c.u2,
            Quantity::A => s[Compartment::A],
            Quantity::AT => s[Compartment::AT],
            Quantity::Burden => s[Compartment::A] + s[Compartment::AT],
        }
    }
}

/// One quantity sampled on the (front point, time node) lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceLayer {
    pub quantity: Quantity,
    /// `values[i][j]`: front point `i`, time node `j`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surfaces {
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    pub layers: Vec<SurfaceLayer>,
}

impl Surfaces {
    pub fn layer(&self, quantity: Quantity) -> &SurfaceLayer {
        self.layers.iter().find(|l| l.quantity == quantity).expect("every quantity is exported")
    }
}

/// Discrete optimal surfaces; row `i` of each layer is the trajectory of
/// front point `i`.
pub fn surface_export(front: &ParetoFront) -> Result<Surfaces> {
    let first = front.points.first().ok_or_else(|| Error::invalid("front", "is empty"))?;
    let times: Vec<f64> = first.trajectory.grid.times().collect();
    if let Some(bad) = front.points.iter().find(|p| p.trajectory.states.len() != times.len()) {
        return Err(Error::LengthMismatch { expected: times.len(), found: bad.trajectory.states.len() });
    }
    let layers = Quantity::ALL
        .into_iter()
        .map(|quantity| SurfaceLayer {
            quantity,
            values: front
                .points
                .iter()
                .map(|p| (0..times.len()).map(|j| quantity.sample(p, j)).collect())
                .collect(),
        })
        .collect();
    Ok(Surfaces { epsilons: front.points.iter().map(|p| p.epsilon).collect(), times, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{eval_f1, eval_f2};
    use crate::simulate::simulate;

    fn small(mop: Mop) -> Scenario {
        Scenario { n_intervals: 20, n_front_points: 6, ..Scenario::new(mop) }
    }

    #[test]
    fn epsilon_grid_examples() {
        let s = Scenario::new(Mop::Mop1);
        let g = epsilon_grid(&s);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.0);
        assert!((g[99] - 9.025).abs() < 1e-12);
        let spacing = 9.025 / 99.0;
        assert!(g.windows(2).all(|w| ((w[1] - w[0]) - spacing).abs() < 1e-12));

        let two = Scenario { n_front_points: 2, ..Scenario::new(Mop::Mop2) };
        let g = epsilon_grid(&two);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 9.025).abs() < 1e-12);

        let g = epsilon_grid(&Scenario::new(Mop::Mop3).with_horizon(30.0));
        assert!((g[99] - 27.075).abs() < 1e-11);
    }

    #[test]
    fn grid_is_shared_across_scenarios() {
        let a = epsilon_grid(&Scenario::new(Mop::Mop1));
        assert_eq!(a, epsilon_grid(&Scenario::new(Mop::Mop2)));
        assert_eq!(a, epsilon_grid(&Scenario::new(Mop::Mop3)));
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario { n_front_points: 1, ..Scenario::new(Mop::Mop1) }.validate().is_err());
        assert!(Scenario { n_intervals: 0, ..Scenario::new(Mop::Mop1) }.validate().is_err());
        Scenario::new(Mop::Mop1).validate().unwrap();
    }

    #[test]
    fn small_sweep_invariants() {
        for mop in Mop::ALL {
            let front = sweep(&small(mop)).unwrap();
            assert_eq!(front.points.len(), 6);
            assert!(front.points.windows(2).all(|w| w[0].epsilon < w[1].epsilon));
            let grid = front.scenario.grid().unwrap();
            for p in &front.points {
                assert!(p.converged(), "{mop} ε={}: {}", p.epsilon, p.diagnostics);
                assert!(p.objectives.f2 <= p.epsilon + 1e-6 * p.epsilon.max(1.0));
                // Stored objectives reproduce on re-evaluation.
                let f1 = eval_f1(&p.trajectory, &grid).unwrap();
                let f2 = eval_f2(&p.controls, &grid).unwrap();
                assert!((f1 - p.objectives.f1).abs() <= 1e-10 * f1.abs());
                assert!((f2 - p.objectives.f2).abs() <= 1e-10 * f2.abs().max(1e-300));
                let again = simulate(&front.scenario.initial(), &p.controls, &grid, &front.scenario.params).unwrap();
                assert_eq!(again.states, p.trajectory.states);
            }
            for w in front.points.windows(2) {
                assert!(w[1].objectives.f1 <= w[0].objectives.f1 * (1.0 + 1e-4));
            }
        }
    }

    #[test]
    fn first_point_is_the_no_control_run() {
        let s = small(Mop::Mop1);
        let front = sweep(&s).unwrap();
        let grid = s.grid().unwrap();
        let free = simulate(&s.initial(), &ControlGrid::zeros(&grid), &grid, &s.params).unwrap();
        assert_eq!(front.points[0].objectives.f1, eval_f1(&free, &grid).unwrap());
        assert_eq!(front.points[0].objectives.f2, 0.0);
    }

    #[test]
    fn parallel_mode_matches_grid_and_feasibility() {
        let s = small(Mop::Mop2);
        let front = sweep_with_mode(&s, SweepMode::Parallel).unwrap();
        assert_eq!(front.metadata.mode, SweepMode::Parallel);
        assert_eq!(front.points.iter().map(|p| p.epsilon).collect::<Vec<_>>(), epsilon_grid(&s));
        let seq = sweep(&s).unwrap();
        for (a, b) in front.points.iter().zip(&seq.points) {
            assert!(a.objectives.f2 <= a.epsilon + 1e-6 * a.epsilon.max(1.0));
            assert!((a.objectives.f1 - b.objectives.f1).abs() <= 1e-3 * b.objectives.f1);
        }
    }

    #[test]
    fn surfaces_are_consistent_with_points() {
        let front = sweep(&small(Mop::Mop2)).unwrap();
        let surf = surface_export(&front).unwrap();
        assert_eq!(surf.epsilons.len(), 6);
        assert_eq!(surf.times.len(), 21);
        assert!(surf.layer(Quantity::U2).values.iter().flatten().all(|v| *v == 0.0));
        let burden = &surf.layer(Quantity::Burden).values[0];
        let first = &front.points[0].trajectory;
        for (j, s) in first.states.iter().enumerate() {
            assert_eq!(burden[j], s[Compartment::A] + s[Compartment::AT]);
        }
        let total = surf.layer(Quantity::TotalControl);
        let u1 = surf.layer(Quantity::U1);
        assert_eq!(total.values, u1.values);
    }

    #[test]
    fn slice_selection() {
        let front = sweep(&small(Mop::Mop1)).unwrap();
        // ε grid: 0, 1.805, 3.61, ...
        let (i, p) = front.at_or_above(3.0).unwrap();
        assert_eq!(i, 2);
        assert!(p.epsilon >= 3.0);
        assert_eq!(front.nearest(3.0).unwrap().0, 2);
        assert_eq!(front.nearest(2.0).unwrap().0, 1);
        assert!(front.at_or_above(100.0).is_none());
    }

    #[test]
    fn empty_front_has_no_surface() {
        let mut front = sweep(&Scenario { n_front_points: 2, n_intervals: 4, ..Scenario::new(Mop::Mop2) }).unwrap();
        front.points.clear();
        assert!(surface_export(&front).is_err());
    }
}
