//! Numerical solver for scalar submodular mean field games.
//!
//! The state space is truncated to a uniform grid and the diffusion is
//! replaced by an upwind Markov chain. For a frozen flow of population laws
//! the representative player solves a finite dynamic programme; the law
//! induced by its optimal feedback is the best response `R(μ)`. Under the
//! decreasing-differences structure `R` is monotone for first-order stochastic
//! dominance, so iterating it from the smallest (largest) feasible flow climbs
//! (descends) to the minimal (maximal) equilibrium.

pub mod chain;
pub mod common_noise;
pub mod error;
pub mod io;
pub mod lq;
pub mod measures;
pub mod mfg;
pub mod model;
pub mod problem;

pub use chain::{
    best_response, brute_force_best_response, build_chain, push_forward, solve_best_response, BestResponse,
    MarkovChainModel, Policy, TieBreak, Transition, ValueFunction,
};
pub use error::{Error, Result};
pub use measures::{DiscreteMeasure, MeasureFlow, StateGrid, TimeGrid};
pub use mfg::{
    expected_cost, learn_from, learn_from_above, learn_from_below, residual, IterationTrace, LearnOutcome,
    LearningOptions, MfgSolution, SolutionKind,
};
pub use model::{ControlSet, CostModel, Dynamics, Interaction, LqParams, MeanShift, QuadraticCost, TimeCoef};
pub use problem::MfgProblem;
