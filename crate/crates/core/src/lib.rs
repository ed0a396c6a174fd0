//! Multiobjective optimal control of a TB-HIV/AIDS coinfection model.
//!
//! Treatment effort `f2 = ∫ u1² + u2²` is traded against AIDS burden
//! `f1 = ∫ A + A_T` by ε-constraint sweeps over a direct transcription of
//! the control problem:
//!
//! * [`model`]: compartments, parameters and the right-hand side;
//! * [`simulate`]: time grid, piecewise-linear controls, RK4, trapezoid rule;
//! * [`objectives`]: `f1`, `f2` and the weighted functional;
//! * [`nlp`]: one constrained subproblem;
//! * [`sweep`]: Pareto fronts and surface exports;
//! * [`cli`]: run configuration and the files behind the `tbhiv` binary.
//!
//! ```
//! use tbhiv::model::Parameters;
//! use tbhiv::nlp::{solve_subproblem, Mop, SubproblemSpec};
//! use tbhiv::simulate::TimeGrid;
//!
//! let grid = TimeGrid::new(10.0, 20).unwrap();
//! let sol = solve_subproblem(&SubproblemSpec::new(Mop::Mop1, 3.0, grid, Parameters::default())).unwrap();
//! assert!(sol.converged() && sol.objectives.f2 <= 3.0 + 1e-6);
//! ```
//!
//! The guide in `book/` walks through each stage.

pub mod cli;
pub mod error;
pub mod model;
pub mod nlp;
pub mod objectives;
pub mod simulate;
pub mod sweep;

pub use error::{Error, Result};

// The book chapters run as doc-tests so their snippets track the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
