//! Monotone learning: iterate the best-response map from the smallest or
//! largest feasible flow until it stops moving.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::chain::{best_response, policy_cost, Policy, TieBreak, ValueFunction};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, MeasureFlow, StateGrid};
use crate::problem::MfgProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningOptions {
    /// Stop once `d(μⁿ, R(μⁿ)) ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LearningOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionKind {
    /// Reached from below with the lowest tie-break.
    Minimal,
    /// Reached from above with the highest tie-break.
    Maximal,
    /// Reached from an arbitrary starting flow.
    Other,
}

/// Final iterate of a learning run together with its best response data.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub flow: MeasureFlow,
    pub policy: Policy,
    pub value: ValueFunction,
    /// `d(flow, R(flow))`.
    pub residual: f64,
    pub kind: SolutionKind,
    pub converged: bool,
    /// Number of best responses computed.
    pub iterations: usize,
}

/// Per-iteration history. Entry `n` of `residuals`, `monotone` and `costs`
/// describes the step from `flows[n]` to `flows[n + 1]`.
#[derive(Debug, Clone, Default)]
pub struct IterationTrace {
    pub flows: Vec<MeasureFlow>,
    pub residuals: Vec<f64>,
    pub monotone: Vec<bool>,
    /// Expected cost of the best response against the current iterate.
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
}

fn run(
    problem: &MfgProblem,
    start: MeasureFlow,
    tie: TieBreak,
    direction: Option<Direction>,
    kind: SolutionKind,
    opts: &LearningOptions,
) -> Result<(MfgSolution, IterationTrace)> {
    let mut trace = IterationTrace::default();
    let mut current = start;
    trace.flows.push(current.clone());
    let mut last: Option<MfgSolution> = None;
    for n in 0..opts.max_iter.max(1) {
        let br = best_response(problem, &current, tie)?;
        let residual = current.distance(&br.flow)?;
        let (time_index, excess) = match direction {
            Some(Direction::Up) => current.order_excess(&br.flow)?,
            Some(Direction::Down) => br.flow.order_excess(&current)?,
            None => (0, 0.0),
        };
        let monotone = excess <= crate::measures::CDF_TOL;
        if !monotone {
            return Err(Error::MonotonicityViolated {
                iteration: n + 1,
                time_index,
                excess,
            });
        }
        let cost = policy_cost(&*problem.chain_for(&current)?, problem.cost(), &current, &br.policy, problem.initial())?;
        trace.residuals.push(residual);
        trace.monotone.push(monotone);
        trace.costs.push(cost);
        let converged = residual <= opts.tol;
        let next = br.flow.clone();
        let solution = MfgSolution {
            flow: current,
            policy: br.policy,
            value: br.value,
            residual,
            kind,
            converged,
            iterations: n + 1,
        };
        if converged {
            return Ok((solution, trace));
        }
        trace.flows.push(next.clone());
        current = next;
        last = Some(solution);
    }
    Ok((last.expect("at least one iteration"), trace))
}

/// Learning from the smallest flow with the lowest tie-break. Converges to the
/// minimal equilibrium of the discretised game; a non-monotone step is a hard
/// error.
pub fn learn_from_below(problem: &MfgProblem, opts: &LearningOptions) -> Result<(MfgSolution, IterationTrace)> {
    learn_from_below_with(problem, TieBreak::Lowest, opts)
}

/// [`learn_from_below`] with an explicit tie-break.
pub fn learn_from_below_with(
    problem: &MfgProblem,
    tie: TieBreak,
    opts: &LearningOptions,
) -> Result<(MfgSolution, IterationTrace)> {
    run(
        problem,
        problem.lower_flow()?,
        tie,
        Some(Direction::Up),
        SolutionKind::Minimal,
        opts,
    )
}

/// Learning from the largest flow with the highest tie-break.
pub fn learn_from_above(problem: &MfgProblem, opts: &LearningOptions) -> Result<(MfgSolution, IterationTrace)> {
    learn_from_above_with(problem, TieBreak::Highest, opts)
}

/// [`learn_from_above`] with an explicit tie-break.
pub fn learn_from_above_with(
    problem: &MfgProblem,
    tie: TieBreak,
    opts: &LearningOptions,
) -> Result<(MfgSolution, IterationTrace)> {
    run(
        problem,
        problem.upper_flow()?,
        tie,
        Some(Direction::Down),
        SolutionKind::Maximal,
        opts,
    )
}

#[derive(Debug, Clone)]
pub enum LearnOutcome {
    Finished(MfgSolution, IterationTrace),
    /// The start is neither below nor above its best response, so monotone
    /// convergence is not guaranteed; nothing was iterated.
    NotComparable { start: MeasureFlow, response: MeasureFlow },
}

/// Learning from an arbitrary flow. Runs only when the start is ordered
/// against its own best response, and then enforces monotonicity along the
/// way.
pub fn learn_from(
    problem: &MfgProblem,
    start: MeasureFlow,
    tie: TieBreak,
    opts: &LearningOptions,
) -> Result<LearnOutcome> {
    let first = best_response(problem, &start, tie)?;
    let direction = if start.leq(&first.flow)? {
        Direction::Up
    } else if first.flow.leq(&start)? {
        Direction::Down
    } else {
        return Ok(LearnOutcome::NotComparable {
            start,
            response: first.flow,
        });
    };
    let (solution, trace) = run(problem, start, tie, Some(direction), SolutionKind::Other, opts)?;
    Ok(LearnOutcome::Finished(solution, trace))
}

/// Fixed-point residual `d(μ, R(μ))`.
pub fn residual(problem: &MfgProblem, mu: &MeasureFlow, tie: TieBreak) -> Result<f64> {
    mu.distance(&best_response(problem, mu, tie)?.flow)
}

/// Expected cost of `policy` for a player facing `mu` and starting from the
/// initial law.
pub fn expected_cost(problem: &MfgProblem, policy: &Policy, mu: &MeasureFlow) -> Result<f64> {
    policy_cost(&*problem.chain_for(mu)?, problem.cost(), mu, policy, problem.initial())
}

/// Random measure made of one to three Gaussian bumps plus a small floor.
pub fn random_measure(grid: &Arc<StateGrid>, rng: &mut impl Rng) -> Result<DiscreteMeasure> {
    let (lo, hi) = (grid.lower(), grid.upper());
    let width = hi - lo;
    let bumps = rng.gen_range(1..=3);
    let specs: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                rng.gen_range(lo..=hi),
                rng.gen_range(grid.dx()..=(width / 4.0).max(grid.dx())),
                rng.gen_range(0.2..1.0),
            )
        })
        .collect();
    let weights = grid
        .points()
        .iter()
        .map(|&x| {
            1e-3 + specs
                .iter()
                .map(|&(c, s, w)| w * (-0.5 * ((x - c) / s).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    DiscreteMeasure::from_weights(grid.clone(), weights)
}

/// Random flow with the problem's initial law at `t_0`.
pub fn random_flow(problem: &MfgProblem, rng: &mut impl Rng) -> Result<MeasureFlow> {
    let mut measures = vec![problem.initial().clone()];
    for _ in 0..problem.time().steps() {
        measures.push(random_measure(problem.grid(), rng)?);
    }
    MeasureFlow::new(measures)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityViolation {
    pub pair: usize,
    pub time_index: usize,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub violations: Vec<MonotonicityViolation>,
    pub max_excess: f64,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `μ ≤ ν ⇒ R(μ) ≤ R(ν)` on `pairs` ordered pairs `(μ ∧ ν', μ ∨ ν')`
/// built from seeded random flows, with both tie-breaks.
pub fn verify_monotone_best_response(problem: &MfgProblem, pairs: usize, seed: u64) -> Result<MonotonicityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MonotonicityReport {
        pairs,
        violations: Vec::new(),
        max_excess: 0.0,
    };
    for pair in 0..pairs {
        let a = random_flow(problem, &mut rng)?;
        let b = random_flow(problem, &mut rng)?;
        let (lo, hi) = (a.meet(&b)?, a.join(&b)?);
        let tie = if pair % 2 == 0 { TieBreak::Lowest } else { TieBreak::Highest };
        let r_lo = best_response(problem, &lo, tie)?.flow;
        let r_hi = best_response(problem, &hi, tie)?.flow;
        let (time_index, excess) = r_lo.order_excess(&r_hi)?;
        report.max_excess = report.max_excess.max(excess);
        if excess > crate::measures::CDF_TOL {
            report.violations.push(MonotonicityViolation {
                pair,
                time_index,
                excess,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeProbe {
    pub ordered: bool,
    pub meet_residual: f64,
    pub join_residual: f64,
}

/// For two flows reports whether they are ordered and the fixed-point
/// residuals of their meet and join.
pub fn lattice_probe(a: &MeasureFlow, b: &MeasureFlow, problem: &MfgProblem) -> Result<LatticeProbe> {
    let ordered = a.leq(b)? || b.leq(a)?;
    Ok(LatticeProbe {
        ordered,
        meet_residual: residual(problem, &a.meet(b)?, TieBreak::Lowest)?,
        join_residual: residual(problem, &a.join(b)?, TieBreak::Lowest)?,
    })
}
