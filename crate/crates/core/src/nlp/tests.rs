use super::*;
use crate::model::{ControlValue, U_MAX};
use crate::objectives::{eval_f1, eval_f2};
use crate::simulate::simulate;
use proptest::prelude::*;

fn spec(mop: Mop, epsilon: f64, n: usize) -> SubproblemSpec {
    SubproblemSpec::new(mop, epsilon, TimeGrid::new(10.0, n).unwrap(), Parameters::default())
}

fn burden(spec: &SubproblemSpec, controls: &ControlGrid) -> f64 {
    let traj = simulate(&spec.initial_state, controls, &spec.grid, &spec.params).unwrap();
    eval_f1(&traj, &spec.grid).unwrap()
}

#[test]
fn mop_names() {
    assert_eq!("MOP2".parse::<Mop>().unwrap(), Mop::Mop2);
    assert_eq!("mop3".parse::<Mop>().unwrap(), Mop::Mop3);
    assert_eq!("1".parse::<Mop>().unwrap(), Mop::Mop1);
    assert!("4".parse::<Mop>().is_err());
    assert_eq!(Mop::Mop1.to_string(), "MOP1");
    assert_eq!(serde_json::to_string(&Mop::Mop3).unwrap(), "\"MOP3\"");
    assert!(Mop::Mop1.uses_u1() && Mop::Mop1.uses_u2());
    assert!(Mop::Mop2.uses_u1() && !Mop::Mop2.uses_u2());
    assert!(!Mop::Mop3.uses_u1() && Mop::Mop3.uses_u2());
}

#[test]
fn settings_validation() {
    SolverSettings::default().validate().unwrap();
    assert!(SolverSettings { budget: 0, ..Default::default() }.validate().is_err());
    let mut s = SolverSettings::default();
    s.tolerances.stationarity = -1.0;
    assert!(s.validate().is_err());
    assert!(SolverSettings { fd_step: f64::NAN, ..Default::default() }.validate().is_err());
}

#[test]
fn zero_epsilon_is_the_no_control_point() {
    for mop in Mop::ALL {
        let s = spec(mop, 0.0, 20);
        let sol = solve_subproblem(&s).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_eq!(sol.evaluations, 1);
        assert_eq!(sol.objectives.f2, 0.0);
        assert!(sol.controls.nodes().iter().all(|c| *c == ControlValue::ZERO));
        assert_eq!(sol.objectives.f1, burden(&s, &ControlGrid::zeros(&s.grid)));
    }
}

#[test]
fn negative_epsilon_is_infeasible() {
    let sol = solve_subproblem(&spec(Mop::Mop1, -0.5, 10)).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(!sol.converged());
    assert!((sol.constraint_violation - 0.5).abs() < 1e-15);
}

#[test]
fn malformed_input_is_an_error() {
    let mut s = spec(Mop::Mop2, 1.0, 10);
    s.initial_guess = ControlGrid::zeros(&TimeGrid::new(10.0, 5).unwrap());
    assert!(matches!(solve_subproblem(&s), Err(Error::LengthMismatch { .. })));
    let mut s = spec(Mop::Mop2, f64::NAN, 10);
    assert!(solve_subproblem(&s).is_err());
    s.epsilon = 1.0;
    s.settings.budget = 0;
    assert!(solve_subproblem(&s).is_err());
}

#[test]
fn budget_is_respected_and_result_stays_feasible() {
    for budget in [1, 2, 30, 200] {
        let mut s = spec(Mop::Mop1, 3.0, 20);
        s.settings.budget = budget;
        let sol = solve_subproblem(&s).unwrap();
        assert!(sol.evaluations <= budget, "{} > {budget}", sol.evaluations);
        assert_eq!(sol.status, SolveStatus::BudgetExhausted);
        assert!(sol.objectives.f2 <= 3.0 + 1e-6);
        assert_eq!(sol.constraint_violation, 0.0);
    }
}

#[test]
fn inactive_controls_stay_at_zero() {
    let sol = solve_subproblem(&spec(Mop::Mop2, 2.0, 20)).unwrap();
    assert!(sol.converged());
    assert!(sol.controls.nodes().iter().all(|c| c.u2 == 0.0));
    assert!(sol.controls.nodes().iter().any(|c| c.u1 > 0.0));
    let sol = solve_subproblem(&spec(Mop::Mop3, 2.0, 20)).unwrap();
    assert!(sol.controls.nodes().iter().all(|c| c.u1 == 0.0));
    assert!(sol.controls.nodes().iter().any(|c| c.u2 > 0.0));
}

#[test]
fn reported_solution_is_self_consistent() {
    let s = spec(Mop::Mop1, 2.5, 20);
    let sol = solve_subproblem(&s).unwrap();
    assert!(sol.converged(), "{}", sol.diagnostics);
    assert!(sol.controls.nodes().iter().all(|c| c.is_admissible(1e-12)));
    assert_eq!(sol.trajectory.controls, sol.controls);
    assert_eq!(sol.objectives.f1, burden(&s, &sol.controls));
    assert_eq!(sol.objectives.f2, eval_f2(&sol.controls, &s.grid).unwrap());
    // The effort constraint is active and priced.
    assert!((sol.objectives.f2 - 2.5).abs() < 1e-6);
    assert!(sol.multiplier > 0.0);
}

#[test]
fn gradient_length_follows_the_scenario() {
    let grid = TimeGrid::new(10.0, 10).unwrap();
    for (mop, len) in [(Mop::Mop1, 22), (Mop::Mop2, 11), (Mop::Mop3, 11)] {
        let s = SubproblemSpec::new(mop, 1.0, grid, Parameters::default());
        let (f1, g) = objective_and_gradient(&ControlGrid::zeros(&grid), &s).unwrap();
        assert_eq!(g.len(), len);
        assert_eq!(f1, burden(&s, &ControlGrid::zeros(&grid)));
    }
    let s = SubproblemSpec::new(Mop::Mop1, 1.0, grid, Parameters::default());
    let short = ControlGrid::zeros(&TimeGrid::new(10.0, 4).unwrap());
    assert!(objective_and_gradient(&short, &s).is_err());
}

#[test]
fn treatment_never_increases_burden_at_zero() {
    let s = spec(Mop::Mop1, 1.0, 10);
    let (_, g) = objective_and_gradient(&ControlGrid::zeros(&s.grid), &s).unwrap();
    // Node 0 only touches the first half step; the rest strictly help.
    assert!(g.iter().all(|v| *v <= 0.0), "{g:?}");
    assert!(g[2..].iter().all(|v| *v < 0.0));
}

#[test]
fn gradient_matches_central_differences() {
    let s = spec(Mop::Mop1, 1.0, 10);
    let nodes: Vec<ControlValue> =
        (0..11).map(|j| ControlValue::new(0.2 + 0.01 * j as f64, 0.3 - 0.01 * j as f64).unwrap()).collect();
    let base = ControlGrid::new(nodes).unwrap();
    let (_, g) = objective_and_gradient(&base, &s).unwrap();
    let h = 1e-5;
    for k in 0..g.len() {
        let (j, second) = (k / 2, k % 2 == 1);
        let shifted = |delta: f64| {
            let mut c = base.clone();
            let node = &mut c.nodes_mut()[j];
            if second {
                node.u2 += delta;
            } else {
                node.u1 += delta;
            }
            burden(&s, &c)
        };
        let central = (shifted(h) - shifted(-h)) / (2.0 * h);
        assert!((g[k] - central).abs() <= 1e-4 * central.abs().max(1e-3), "k={k}: {} vs {central}", g[k]);
    }
}

#[test]
fn small_problem_beats_a_feasible_grid_search() {
    // Two intervals, u2 only: enumerate a fine grid of the three node values.
    let s = SubproblemSpec::new(Mop::Mop3, 0.6, TimeGrid::new(2.0, 2).unwrap(), Parameters::default());
    let sol = solve_subproblem(&s).unwrap();
    assert!(sol.converged(), "{}", sol.diagnostics);
    let levels: Vec<f64> = (0..=40).map(|i| U_MAX * i as f64 / 40.0).collect();
    let mut best = f64::INFINITY;
    for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                let nodes = [a, b, c].map(|u2| ControlValue { u1: 0.0, u2 });
                let grid = ControlGrid::new(nodes.to_vec()).unwrap();
                if eval_f2(&grid, &s.grid).unwrap() <= 0.6 {
                    best = best.min(burden(&s, &grid));
                }
            }
        }
    }
    assert!(best.is_finite() && best > 0.0);
    assert!(sol.objectives.f1 <= best + 1e-9 * best, "{} vs grid {best}", sol.objectives.f1);
}

#[test]
fn largest_epsilon_with_u1_saturates() {
    let s = spec(Mop::Mop2, U_MAX * U_MAX * 10.0, 20);
    let sol = solve_subproblem(&s).unwrap();
    assert!(sol.converged());
    assert!(sol.controls.nodes().iter().all(|c| (c.u1 - U_MAX).abs() < 1e-6));
}

#[test]
fn warm_start_reaches_the_same_optimum() {
    let cold = solve_subproblem(&spec(Mop::Mop1, 4.0, 20)).unwrap();
    let previous = solve_subproblem(&spec(Mop::Mop1, 3.5, 20)).unwrap();
    let mut s = spec(Mop::Mop1, 4.0, 20);
    s.initial_guess = previous.controls.clone();
    s.initial_multiplier = Some(previous.multiplier);
    let warm = solve_subproblem(&s).unwrap();
    assert!(cold.converged() && warm.converged());
    assert!((warm.objectives.f1 - cold.objectives.f1).abs() <= 1e-5 * cold.objectives.f1);
    eprintln!("evaluations: cold {}, warm {}", cold.evaluations, warm.evaluations);
}

#[test]
fn inadmissible_initial_guess_is_projected() {
    let mut s = spec(Mop::Mop2, 1.0, 10);
    s.initial_guess = ControlGrid::from_nodes_unchecked(vec![ControlValue { u1: 2.0, u2: 0.7 }; 11]);
    let sol = solve_subproblem(&s).unwrap();
    assert!(sol.converged());
    assert!(sol.controls.nodes().iter().all(|c| c.is_admissible(1e-12) && c.u2 == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn result_is_always_feasible(
        mop_index in 0usize..3,
        fraction in 0.0..1.0f64,
        budget in 1usize..400,
    ) {
        let mop = Mop::ALL[mop_index];
        let epsilon = fraction * U_MAX * U_MAX * 10.0;
        let mut s = spec(mop, epsilon, 6);
        s.settings.budget = budget;
        let sol = solve_subproblem(&s).unwrap();
        prop_assert!(sol.evaluations <= budget);
        prop_assert!(sol.objectives.f2 <= epsilon + 1e-6 * epsilon.max(1.0));
        prop_assert!(sol.controls.nodes().iter().all(|c| c.is_admissible(1e-12)));
    }
}
