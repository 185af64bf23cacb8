//! Games with a common noise `σ₀ dB` where players interact through the
//! conditional mean of the state given the common noise.
//!
//! `B` is discretised on a recombining binomial tree with `K` levels, each
//! spanning `N / K` steps of the state chain. At the end of a level every
//! state is shifted by `±σ₀ √Δt_B` with probability ½ (linear interpolation
//! onto the grid). Conditioning on the path of `B` is replaced by conditioning
//! on the current tree node. A conditional flow holds one mean per
//! `(time step, node of the current level)`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::chain::{continuation, select, upwind_row, TieBreak};
use crate::error::{Error, Result};
use crate::io::ConditionalRow;
use crate::measures::{DiscreteMeasure, StateGrid, TimeGrid};
use crate::mfg::{LearningOptions, SolutionKind};
use crate::model::{ControlSet, CostModel, Dynamics};

/// Slack on nodewise comparisons of conditional means.
pub const MEAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioTree {
    depth: usize,
    horizon: f64,
    sigma0: f64,
    steps_per_level: usize,
}

impl ScenarioTree {
    pub fn new(depth: usize, time: &TimeGrid, sigma0: f64) -> Result<Self> {
        if depth == 0 || !time.steps().is_multiple_of(depth) {
            return Err(Error::InvalidModel(format!(
                "tree depth {depth} must divide the number of time steps {}",
                time.steps()
            )));
        }
        if !(sigma0 >= 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidModel(format!("common-noise volatility must be >= 0, got {sigma0}")));
        }
        Ok(Self {
            depth,
            horizon: time.horizon(),
            sigma0,
            steps_per_level: time.steps() / depth,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn steps_per_level(&self) -> usize {
        self.steps_per_level
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.depth as f64
    }

    /// Branch increment `σ₀ √Δt_B`.
    pub fn increment(&self) -> f64 {
        self.sigma0 * self.dt().sqrt()
    }

    /// Level active at state step `k` (after the shocks at `k`).
    pub fn level_of_step(&self, k: usize) -> usize {
        k / self.steps_per_level
    }

    pub fn nodes(&self, level: usize) -> usize {
        level + 1
    }

    /// `σ₀ B` at node `j` of `level`.
    pub fn b_value(&self, level: usize, j: usize) -> f64 {
        self.increment() * (2.0 * j as f64 - level as f64)
    }

    /// `C(level, j) / 2^level`.
    pub fn prob(&self, level: usize, j: usize) -> f64 {
        let mut p = 0.5f64.powi(level as i32);
        for r in 0..j {
            p *= (level - r) as f64 / (r + 1) as f64;
        }
        p
    }
}

/// Conditional means `μ[k][j]`, `j` ranging over the nodes of the level
/// active at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFlow {
    tree: ScenarioTree,
    values: Vec<Vec<f64>>,
}

impl ConditionalFlow {
    pub fn from_fn(tree: ScenarioTree, steps: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..=steps)
            .map(|k| (0..tree.nodes(tree.level_of_step(k))).map(|j| f(k, j)).collect())
            .collect();
        Self { tree, values }
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k][j]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Means at the tree times, one row per level.
    pub fn at_level(&self, level: usize) -> &[f64] {
        &self.values[level * self.tree.steps_per_level]
    }

    /// Largest `self - other` over all nodes, with its location.
    pub fn order_excess(&self, other: &Self) -> (usize, usize, f64) {
        let mut worst = (0, 0, f64::NEG_INFINITY);
        for (k, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            for (j, (x, y)) in a.iter().zip(b).enumerate() {
                if x - y > worst.2 {
                    worst = (k, j, x - y);
                }
            }
        }
        worst
    }

    pub fn leq(&self, other: &Self) -> bool {
        self.order_excess(other).2 <= MEAN_TOL
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<ConditionalRow> {
        let mut rows = Vec::new();
        for level in 0..=self.tree.depth {
            for (j, &mu) in self.at_level(level).iter().enumerate() {
                rows.push(ConditionalRow {
                    level,
                    node: j,
                    b_value: self.tree.b_value(level, j),
                    prob: self.tree.prob(level, j),
                    mu,
                });
            }
        }
        rows
    }
}

/// Game on the augmented state (grid node, tree node). Costs and the
/// mean-field drift may only depend on the population through its mean.
#[derive(Debug, Clone)]
pub struct CommonNoiseProblem {
    grid: Arc<StateGrid>,
    time: TimeGrid,
    controls: ControlSet,
    dynamics: Dynamics,
    cost: CostModel,
    initial: DiscreteMeasure,
    tree: ScenarioTree,
    drift_bound: f64,
}

impl CommonNoiseProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Arc<StateGrid>,
        time: TimeGrid,
        controls: ControlSet,
        dynamics: Dynamics,
        cost: CostModel,
        initial: DiscreteMeasure,
        sigma0: f64,
        depth: usize,
    ) -> Result<Self> {
        if dynamics.is_geometric() {
            return Err(Error::UnsupportedCommonNoise(
                "geometric dynamics have unbounded drift".into(),
            ));
        }
        if let Some(shift) = dynamics.mean_shift() {
            if shift.eval_mean(0.0).is_none() {
                return Err(Error::UnsupportedCommonNoise(
                    "mean-field drift must depend on the population mean only".into(),
                ));
            }
        }
        if !cost.depends_on_mean_only() {
            return Err(Error::UnsupportedCommonNoise(
                "costs must depend on the population mean only".into(),
            ));
        }
        if initial.grid().as_ref() != grid.as_ref() {
            return Err(Error::GridMismatch);
        }
        crate::chain::check_cfl(&dynamics, &grid, &time, &controls)?;
        let tree = ScenarioTree::new(depth, &time, sigma0)?;
        let shifts = match dynamics.mean_shift() {
            Some(s) => vec![-s.bound(), s.bound()],
            None => vec![0.0],
        };
        let mut drift_bound: f64 = 0.0;
        for t in time.times() {
            for &x in grid.points() {
                for &a in controls.values() {
                    for &s in &shifts {
                        drift_bound = drift_bound.max(dynamics.drift(t, x, a, s).abs());
                    }
                }
            }
        }
        Ok(Self {
            grid,
            time,
            controls,
            dynamics,
            cost,
            initial,
            tree,
            drift_bound,
        })
    }

    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn initial(&self) -> &DiscreteMeasure {
        &self.initial
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    /// `sup |b|` over the grid, controls and admissible mean-field shifts.
    pub fn drift_bound(&self) -> f64 {
        self.drift_bound
    }

    /// `max|ξ| + t ‖b‖∞ + 3σ√t + σ₀|B|` at `(k, j)`.
    pub fn envelope(&self, k: usize, j: usize) -> f64 {
        let t = self.time.time(k);
        let level = self.tree.level_of_step(k);
        let support = self
            .initial
            .weights()
            .iter()
            .zip(self.grid.points())
            .filter(|(w, _)| **w > 0.0)
            .map(|(_, x)| x.abs())
            .fold(0.0, f64::max);
        support
            + t * self.drift_bound
            + 3.0 * self.dynamics.sigma() * t.sqrt()
            + self.tree.b_value(level, j).abs()
    }

    pub fn lower_flow(&self) -> ConditionalFlow {
        ConditionalFlow::from_fn(self.tree, self.time.steps(), |k, j| {
            (-self.envelope(k, j)).max(self.grid.lower())
        })
    }

    pub fn upper_flow(&self) -> ConditionalFlow {
        ConditionalFlow::from_fn(self.tree, self.time.steps(), |k, j| {
            self.envelope(k, j).min(self.grid.upper())
        })
    }

    fn check_flow(&self, mu: &ConditionalFlow) -> Result<()> {
        if mu.tree != self.tree || mu.steps() != self.time.steps() {
            return Err(Error::InvalidModel("conditional flow does not match the tree".into()));
        }
        Ok(())
    }
}

/// Augmented feedback `π[k][j][i]` and value `V[k][j][i]`.
pub type AugmentedPolicy = Vec<Vec<Vec<usize>>>;
pub type AugmentedValue = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
pub struct CnBestResponse {
    pub flow: ConditionalFlow,
    pub policy: AugmentedPolicy,
    pub value: AugmentedValue,
    /// Mean of the law aggregated over all nodes, per step.
    pub unconditional_means: Vec<f64>,
    /// `Σ_k Σ_j Σ_i q[k][j][i] (f + l) Δt + Σ q[N] g`.
    pub expected_cost: f64,
}

/// Moves the mass at `x_i` to `x_i + shift`, split linearly between the two
/// neighbouring nodes.
fn shift_mass(grid: &StateGrid, w: &[f64], shift: f64) -> Vec<f64> {
    if shift == 0.0 {
        return w.to_vec();
    }
    let mut out = vec![0.0; w.len()];
    for (i, &x) in grid.points().iter().enumerate() {
        let (idx, theta) = grid.locate(x + shift);
        out[idx] += (1.0 - theta) * w[i];
        out[idx + 1] += theta * w[i];
    }
    out
}

/// Adjoint of [`shift_mass`]: `V(x_i + shift)` by linear interpolation.
fn shift_values(grid: &StateGrid, v: &[f64], shift: f64) -> Vec<f64> {
    if shift == 0.0 {
        return v.to_vec();
    }
    grid.points()
        .iter()
        .map(|&x| {
            let (idx, theta) = grid.locate(x + shift);
            (1.0 - theta) * v[idx] + theta * v[idx + 1]
        })
        .collect()
}

struct Kernel<'a> {
    problem: &'a CommonNoiseProblem,
    mu: &'a ConditionalFlow,
}

impl Kernel<'_> {
    fn drift_shift(&self, z: f64) -> f64 {
        self.problem
            .dynamics
            .mean_shift()
            .and_then(|s| s.eval_mean(z))
            .unwrap_or(0.0)
    }

    /// `(Δt (f + l), transition, drift)` at `(k, j, i, u)`.
    fn step(&self, k: usize, j: usize, i: usize, u: usize) -> (f64, crate::chain::Transition, f64) {
        let p = self.problem;
        let t = p.time.time(k);
        let z = self.mu.get(k, j);
        let x = p.grid.point(i);
        let a = p.controls.value(u);
        let running = p.cost.running_term().eval_mean(t, x, z).unwrap_or(0.0);
        let stage = (running + p.cost.control_cost(t, x, a)) * p.time.dt();
        let b = p.dynamics.drift(t, x, a, self.drift_shift(z));
        let row = upwind_row(b, p.dynamics.local_vol(x), p.time.dt(), p.grid.dx(), i, p.grid.len());
        (stage, row, b)
    }

    fn terminal(&self, j: usize) -> Vec<f64> {
        let p = self.problem;
        let z = self.mu.get(p.time.steps(), j);
        p.grid
            .points()
            .iter()
            .map(|&x| p.cost.terminal_term().eval_mean(p.time.horizon(), x, z).unwrap_or(0.0))
            .collect()
    }

    /// Continuation values seen at the end of step `k` from node `j`.
    fn next_values(&self, k: usize, j: usize, values_next: &[Vec<f64>]) -> Vec<f64> {
        let tree = &self.problem.tree;
        if !(k + 1).is_multiple_of(tree.steps_per_level()) {
            return values_next[j].clone();
        }
        let d = tree.increment();
        let grid = &self.problem.grid;
        let down = shift_values(grid, &values_next[j], -d);
        let up = shift_values(grid, &values_next[j + 1], d);
        down.iter().zip(&up).map(|(a, b)| 0.5 * a + 0.5 * b).collect()
    }

    /// Joint masses `q[k][j][i]` under `policy`, and the resulting response.
    fn push(&self, policy: &AugmentedPolicy) -> (Vec<Vec<Vec<f64>>>, f64) {
        let p = self.problem;
        let tree = &p.tree;
        let n = p.time.steps();
        let m = p.grid.len();
        let mut q: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n + 1);
        q.push(vec![p.initial.weights().to_vec()]);
        let mut cost = 0.0;
        for k in 0..n {
            let level = tree.level_of_step(k);
            let mut pre = Vec::with_capacity(level + 1);
            for j in 0..=level {
                let w = &q[k][j];
                let rows: Vec<_> = (0..m).map(|i| self.step(k, j, i, policy[k][j][i])).collect();
                for i in 0..m {
                    cost += w[i] * rows[i].0;
                }
                let next: Vec<f64> = (0..m)
                    .map(|i| {
                        let mut v = w[i] * rows[i].1.stay;
                        if i > 0 {
                            v += w[i - 1] * rows[i - 1].1.up;
                        }
                        if i + 1 < m {
                            v += w[i + 1] * rows[i + 1].1.down;
                        }
                        v
                    })
                    .collect();
                pre.push(next);
            }
            if (k + 1) % tree.steps_per_level() == 0 {
                let d = tree.increment();
                let mut post = vec![vec![0.0; m]; level + 2];
                for (j, w) in pre.iter().enumerate() {
                    let down = shift_mass(&p.grid, w, -d);
                    let up = shift_mass(&p.grid, w, d);
                    for i in 0..m {
                        post[j][i] += 0.5 * down[i];
                        post[j + 1][i] += 0.5 * up[i];
                    }
                }
                q.push(post);
            } else {
                q.push(pre);
            }
        }
        for (j, w) in q[n].iter().enumerate() {
            let g = self.terminal(j);
            cost += w.iter().zip(&g).map(|(w, g)| w * g).sum::<f64>();
        }
        (q, cost)
    }

    fn response(&self, policy: AugmentedPolicy, value: AugmentedValue) -> CnBestResponse {
        let p = self.problem;
        let (q, expected_cost) = self.push(&policy);
        let xs = p.grid.points();
        let mean = |w: &[f64]| -> (f64, f64) {
            let mass: f64 = w.iter().sum();
            let first: f64 = w.iter().zip(xs).map(|(w, x)| w * x).sum();
            (mass, first)
        };
        let flow = ConditionalFlow::from_fn(p.tree, p.time.steps(), |k, j| {
            let (mass, first) = mean(&q[k][j]);
            first / mass
        });
        let unconditional_means = q
            .iter()
            .map(|nodes| {
                let (mass, first) = nodes.iter().map(|w| mean(w)).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
                first / mass
            })
            .collect();
        CnBestResponse {
            flow,
            policy,
            value,
            unconditional_means,
            expected_cost,
        }
    }
}

/// Best response to a conditional flow: backward induction over the augmented
/// state, then the conditional means of the induced law at every node.
pub fn cn_best_response(problem: &CommonNoiseProblem, mu: &ConditionalFlow, tie: TieBreak) -> Result<CnBestResponse> {
    problem.check_flow(mu)?;
    let kernel = Kernel { problem, mu };
    let tree = &problem.tree;
    let n = problem.time.steps();
    let m = problem.grid.len();
    let nk = problem.controls.len();

    let mut value: AugmentedValue = vec![Vec::new(); n + 1];
    let mut policy: AugmentedPolicy = vec![Vec::new(); n];
    value[n] = (0..=tree.depth()).map(|j| kernel.terminal(j)).collect();
    for k in (0..n).rev() {
        let level = tree.level_of_step(k);
        let next_level = &value[k + 1];
        let solved: Vec<(Vec<usize>, Vec<f64>)> = (0..=level)
            .into_par_iter()
            .map(|j| {
                let next = kernel.next_values(k, j, next_level);
                let row: Vec<(usize, f64)> = (0..m)
                    .map(|i| {
                        let candidates = (0..nk).map(|u| {
                            let (stage, tr, b) = kernel.step(k, j, i, u);
                            (u, stage + continuation(tr, &next, i), b)
                        });
                        select(candidates.collect::<Vec<_>>().into_iter(), tie)
                    })
                    .collect();
                (row.iter().map(|r| r.0).collect(), row.iter().map(|r| r.1).collect())
            })
            .collect();
        let (p, v): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
        policy[k] = p;
        value[k] = v;
    }
    Ok(kernel.response(policy, value))
}

/// Limit on the number of augmented policies enumerated by
/// [`cn_brute_force_best_response`].
pub const CN_BRUTE_FORCE_MAX_POLICIES: u64 = 1 << 20;

/// Best response by enumerating every augmented feedback and keeping the one
/// with the smallest expected cost (first found among exact ties).
pub fn cn_brute_force_best_response(problem: &CommonNoiseProblem, mu: &ConditionalFlow) -> Result<CnBestResponse> {
    problem.check_flow(mu)?;
    let kernel = Kernel { problem, mu };
    let tree = &problem.tree;
    let n = problem.time.steps();
    let m = problem.grid.len();
    let nk = problem.controls.len() as u64;
    let slots: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|k| (0..=tree.level_of_step(k)).flat_map(move |j| (0..m).map(move |i| (k, j, i))))
        .collect();
    let total = (nk as f64).powi(slots.len() as i32);
    if total > CN_BRUTE_FORCE_MAX_POLICIES as f64 {
        return Err(Error::InstanceTooLarge(format!(
            "{} decision points with {nk} controls",
            slots.len()
        )));
    }
    let mut policy: AugmentedPolicy = (0..n)
        .map(|k| vec![vec![0; m]; tree.level_of_step(k) + 1])
        .collect();
    let mut best: Option<(f64, AugmentedPolicy)> = None;
    for code in 0..total as u64 {
        let mut c = code;
        for &(k, j, i) in &slots {
            policy[k][j][i] = (c % nk) as usize;
            c /= nk;
        }
        let (_, cost) = kernel.push(&policy);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, policy.clone()));
        }
    }
    let (_, policy) = best.expect("at least one policy");
    Ok(kernel.response(policy, Vec::new()))
}

#[derive(Debug, Clone)]
pub struct CnSolution {
    pub flow: ConditionalFlow,
    pub response: CnBestResponse,
    pub residual: f64,
    pub kind: SolutionKind,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CnTrace {
    pub flows: Vec<ConditionalFlow>,
    pub residuals: Vec<f64>,
    pub monotone: Vec<bool>,
    /// Expected cost of each best response against the current iterate.
    pub costs: Vec<f64>,
}

fn cn_run(
    problem: &CommonNoiseProblem,
    start: ConditionalFlow,
    tie: TieBreak,
    upward: bool,
    kind: SolutionKind,
    opts: &LearningOptions,
) -> Result<(CnSolution, CnTrace)> {
    let mut trace = CnTrace::default();
    let mut current = start;
    trace.flows.push(current.clone());
    let mut last = None;
    for n in 0..opts.max_iter.max(1) {
        let response = cn_best_response(problem, &current, tie)?;
        let residual = current.distance(&response.flow);
        let (k, _, excess) = if upward {
            current.order_excess(&response.flow)
        } else {
            response.flow.order_excess(&current)
        };
        if excess > MEAN_TOL {
            return Err(Error::MonotonicityViolated {
                iteration: n + 1,
                time_index: k,
                excess,
            });
        }
        trace.residuals.push(residual);
        trace.monotone.push(true);
        trace.costs.push(response.expected_cost);
        let converged = residual <= opts.tol;
        let next = response.flow.clone();
        let solution = CnSolution {
            flow: current,
            response,
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

/// Learning from the nodewise smallest envelope-bounded flow.
pub fn cn_learn_from_below(problem: &CommonNoiseProblem, opts: &LearningOptions) -> Result<(CnSolution, CnTrace)> {
    cn_run(problem, problem.lower_flow(), TieBreak::Lowest, true, SolutionKind::Minimal, opts)
}

/// Learning from the nodewise largest envelope-bounded flow.
pub fn cn_learn_from_above(problem: &CommonNoiseProblem, opts: &LearningOptions) -> Result<(CnSolution, CnTrace)> {
    cn_run(problem, problem.upper_flow(), TieBreak::Highest, false, SolutionKind::Maximal, opts)
}
