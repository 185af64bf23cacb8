//! Upwind Markov chain approximation of the controlled diffusion and the
//! finite-horizon dynamic programme solved on it.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, MeasureFlow, StateGrid, TimeGrid};
use crate::model::{ControlSet, CostModel, Dynamics};
use crate::problem::MfgProblem;

/// Slack allowed on the CFL product `Δt (σ²/Δx² + |b|/Δx) ≤ 1`.
pub const CFL_SLACK: f64 = 1e-12;

/// Absolute tolerance under which two control values are considered tied.
pub const TIE_TOL: f64 = 1e-12;

/// Below this many state-control pairs a time step is solved sequentially.
const PAR_THRESHOLD: usize = 4096;

/// Rule used among minimisers whose values tie within [`TIE_TOL`]: pick the
/// control with the smallest (largest) drift, then the smallest (largest)
/// index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TieBreak {
    Lowest,
    Highest,
}

/// One row of the tridiagonal transition matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Transition {
    pub down: f64,
    pub stay: f64,
    pub up: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Slice {
    transitions: Vec<Transition>,
    drifts: Vec<f64>,
}

/// Transition probabilities for every `(k, i, u)`. Consecutive identical time
/// slices are stored once.
#[derive(Debug, Clone)]
pub struct MarkovChainModel {
    grid: Arc<StateGrid>,
    time: TimeGrid,
    controls: ControlSet,
    slices: Vec<Slice>,
    slice_of_step: Vec<usize>,
}

impl MarkovChainModel {
    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn distinct_slices(&self) -> usize {
        self.slices.len()
    }

    fn slice(&self, k: usize) -> &Slice {
        &self.slices[self.slice_of_step[k]]
    }

    pub fn transition(&self, k: usize, i: usize, u: usize) -> Transition {
        self.slice(k).transitions[i * self.controls.len() + u]
    }

    pub fn drift(&self, k: usize, i: usize, u: usize) -> f64 {
        self.slice(k).drifts[i * self.controls.len() + u]
    }
}

/// Row of the upwind scheme at node `i` of `m`, with boundary mass folded back
/// onto the edge node.
pub fn upwind_row(drift: f64, vol: f64, dt: f64, dx: f64, i: usize, m: usize) -> Transition {
    let diff = 0.5 * vol * vol;
    let mut up = (diff + dx * drift.max(0.0)) * dt / (dx * dx);
    let mut down = (diff + dx * (-drift).max(0.0)) * dt / (dx * dx);
    if i == 0 {
        down = 0.0;
    }
    if i + 1 == m {
        up = 0.0;
    }
    Transition {
        down,
        stay: 1.0 - up - down,
        up,
    }
}

/// CFL rate `σ²/Δx² + |b|/Δx` of a row.
fn cfl_rate(drift: f64, vol: f64, dx: f64) -> f64 {
    vol * vol / (dx * dx) + drift.abs() / dx
}

fn cfl_error(time: &TimeGrid, rate: f64) -> Error {
    let required_dt = 1.0 / rate;
    Error::Cfl {
        dt: time.dt(),
        required_dt,
        required_steps: (time.horizon() / required_dt).ceil() as usize,
    }
}

/// Checks the CFL condition over all nodes, controls and time steps. For
/// mean-field drifts both extreme shift values are tried, which covers every
/// flow since the drift is affine in the shift.
pub fn check_cfl(dynamics: &Dynamics, grid: &StateGrid, time: &TimeGrid, controls: &ControlSet) -> Result<()> {
    let shifts = match dynamics.mean_shift() {
        Some(s) => vec![-s.bound(), s.bound()],
        None => vec![0.0],
    };
    let mut worst: f64 = 0.0;
    for k in 0..time.steps() {
        let t = time.time(k);
        for &x in grid.points() {
            let vol = dynamics.local_vol(x);
            for &a in controls.values() {
                for &s in &shifts {
                    worst = worst.max(cfl_rate(dynamics.drift(t, x, a, s), vol, grid.dx()));
                }
            }
        }
    }
    if time.dt() * worst > 1.0 + CFL_SLACK {
        return Err(cfl_error(time, worst));
    }
    Ok(())
}

/// Builds the chain. Mean-field drifts read `m(μ_k)` from `flow`.
pub fn build_chain(
    dynamics: &Dynamics,
    grid: &Arc<StateGrid>,
    time: &TimeGrid,
    controls: &ControlSet,
    flow: Option<&MeasureFlow>,
) -> Result<MarkovChainModel> {
    let shifts: Vec<f64> = match (dynamics.is_mean_field(), flow) {
        (true, None) => return Err(Error::MissingFlow),
        (true, Some(flow)) => {
            if flow.len() != time.steps() + 1 || flow.grid().as_ref() != grid.as_ref() {
                return Err(Error::GridMismatch);
            }
            (0..time.steps()).map(|k| dynamics.shift_for(flow.get(k))).collect()
        }
        (false, _) => vec![0.0; time.steps()],
    };
    let m = grid.len();
    let dx = grid.dx();
    let dt = time.dt();
    let mut slices: Vec<Slice> = Vec::new();
    let mut slice_of_step = Vec::with_capacity(time.steps());
    let mut worst: f64 = 0.0;
    for (k, &shift) in shifts.iter().enumerate() {
        let t = time.time(k);
        let mut transitions = Vec::with_capacity(m * controls.len());
        let mut drifts = Vec::with_capacity(m * controls.len());
        for (i, &x) in grid.points().iter().enumerate() {
            let vol = dynamics.local_vol(x);
            for &a in controls.values() {
                let b = dynamics.drift(t, x, a, shift);
                worst = worst.max(cfl_rate(b, vol, dx));
                transitions.push(upwind_row(b, vol, dt, dx, i, m));
                drifts.push(b);
            }
        }
        let slice = Slice { transitions, drifts };
        match slices.last() {
            Some(prev) if *prev == slice => {}
            _ => slices.push(slice),
        }
        slice_of_step.push(slices.len() - 1);
    }
    if dt * worst > 1.0 + CFL_SLACK {
        return Err(cfl_error(time, worst));
    }
    Ok(MarkovChainModel {
        grid: grid.clone(),
        time: *time,
        controls: controls.clone(),
        slices,
        slice_of_step,
    })
}

/// `V[k][i]` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<Vec<f64>>,
}

impl ValueFunction {
    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.values[k][i]
    }
}

/// Control indices `π[k][i]` for `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub controls: Vec<Vec<usize>>,
}

impl Policy {
    pub fn at(&self, k: usize, i: usize) -> usize {
        self.controls[k][i]
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }
}

/// Stage data `f(t_k, x_i, μ_k)` and `l(t_k, x_i, a_u)` for every step.
struct StageCosts {
    running: Vec<Vec<f64>>,
    control: Vec<Vec<f64>>,
    terminal: Vec<f64>,
}

fn stage_costs(chain: &MarkovChainModel, cost: &CostModel, mu: &MeasureFlow) -> Result<StageCosts> {
    let grid = chain.grid();
    let time = chain.time();
    if mu.len() != time.steps() + 1 || mu.grid().as_ref() != grid.as_ref() {
        return Err(Error::GridMismatch);
    }
    let controls = chain.controls();
    let control_slice = |t: f64| -> Vec<f64> {
        grid.points()
            .iter()
            .flat_map(|&x| controls.values().iter().map(move |&a| cost.control_cost(t, x, a)))
            .collect()
    };
    let running = (0..time.steps())
        .map(|k| cost.running_term().on_grid(time.time(k), grid, mu.get(k)))
        .collect();
    let control = (0..time.steps()).map(|k| control_slice(time.time(k))).collect();
    let terminal = cost.terminal_term().on_grid(time.horizon(), grid, mu.terminal());
    Ok(StageCosts {
        running,
        control,
        terminal,
    })
}

#[inline]
pub(crate) fn continuation(p: Transition, next: &[f64], i: usize) -> f64 {
    let m = next.len();
    let down = if i > 0 { next[i - 1] } else { 0.0 };
    let up = if i + 1 < m { next[i + 1] } else { 0.0 };
    p.down * down + p.stay * next[i] + p.up * up
}

/// Among candidates `(u, q_u, drift_u)` picks the tie-broken minimiser.
pub(crate) fn select(candidates: impl Iterator<Item = (usize, f64, f64)> + Clone, tie: TieBreak) -> (usize, f64) {
    let best = candidates.clone().map(|(_, q, _)| q).fold(f64::INFINITY, f64::min);
    let mut chosen: Option<(usize, f64)> = None;
    for (u, q, b) in candidates {
        if q > best + TIE_TOL {
            continue;
        }
        chosen = match (chosen, tie) {
            (None, _) => Some((u, b)),
            (Some((_, cb)), TieBreak::Lowest) if b < cb => Some((u, b)),
            (Some((_, cb)), TieBreak::Highest) if b >= cb => Some((u, b)),
            (c, _) => c,
        };
    }
    (chosen.map_or(0, |(u, _)| u), best)
}

/// Backward induction on the chain for a frozen flow `mu`.
pub fn solve_best_response(
    chain: &MarkovChainModel,
    cost: &CostModel,
    mu: &MeasureFlow,
    tie: TieBreak,
) -> Result<(ValueFunction, Policy)> {
    let stage = stage_costs(chain, cost, mu)?;
    let n = chain.time().steps();
    let m = chain.grid().len();
    let nk = chain.controls().len();
    let dt = chain.time().dt();

    let mut values = vec![Vec::new(); n + 1];
    let mut controls = vec![Vec::new(); n];
    values[n] = stage.terminal.clone();
    for k in (0..n).rev() {
        let next = &values[k + 1];
        let solve_node = |i: usize| {
            let candidates = (0..nk).map(|u| {
                let q = (stage.running[k][i] + stage.control[k][i * nk + u]) * dt
                    + continuation(chain.transition(k, i, u), next, i);
                (u, q, chain.drift(k, i, u))
            });
            select(candidates, tie)
        };
        let row: Vec<(usize, f64)> = if m * nk >= PAR_THRESHOLD {
            (0..m).into_par_iter().map(solve_node).collect()
        } else {
            (0..m).map(solve_node).collect()
        };
        controls[k] = row.iter().map(|&(u, _)| u).collect();
        values[k] = row.iter().map(|&(_, v)| v).collect();
    }
    Ok((ValueFunction { values }, Policy { controls }))
}

/// Law of the controlled chain started from `initial` under `policy`.
pub fn push_forward(chain: &MarkovChainModel, policy: &Policy, initial: &DiscreteMeasure) -> Result<MeasureFlow> {
    let grid = chain.grid();
    if initial.grid().as_ref() != grid.as_ref() {
        return Err(Error::GridMismatch);
    }
    let n = chain.time().steps();
    if policy.steps() != n {
        return Err(Error::InvalidModel("policy length does not match the time grid".into()));
    }
    let m = grid.len();
    let mut measures = Vec::with_capacity(n + 1);
    measures.push(initial.clone());
    let mut w = initial.weights().to_vec();
    for k in 0..n {
        let row = |i: usize| chain.transition(k, i, policy.at(k, i));
        let next: Vec<f64> = (0..m)
            .map(|j| {
                let mut v = w[j] * row(j).stay;
                if j > 0 {
                    v += w[j - 1] * row(j - 1).up;
                }
                if j + 1 < m {
                    v += w[j + 1] * row(j + 1).down;
                }
                v
            })
            .collect();
        let measure = DiscreteMeasure::from_weights(grid.clone(), next)?;
        w = measure.weights().to_vec();
        measures.push(measure);
    }
    MeasureFlow::new(measures)
}

/// Expected cost `Σ_k ⟨f + l, ν_k⟩ Δt + ⟨g, ν_N⟩` of `policy` against the
/// frozen flow `mu`, where `ν` is the law induced by `policy` from `initial`.
pub fn policy_cost(
    chain: &MarkovChainModel,
    cost: &CostModel,
    mu: &MeasureFlow,
    policy: &Policy,
    initial: &DiscreteMeasure,
) -> Result<f64> {
    let stage = stage_costs(chain, cost, mu)?;
    let nu = push_forward(chain, policy, initial)?;
    let nk = chain.controls().len();
    let dt = chain.time().dt();
    let mut total = 0.0;
    for k in 0..chain.time().steps() {
        let w = nu.get(k).weights();
        let step: f64 = (0..w.len())
            .map(|i| w[i] * (stage.running[k][i] + stage.control[k][i * nk + policy.at(k, i)]))
            .sum();
        total += step * dt;
    }
    let w = nu.terminal().weights();
    total += (0..w.len()).map(|i| w[i] * stage.terminal[i]).sum::<f64>();
    Ok(total)
}

/// Result of one application of the best-response map.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub flow: MeasureFlow,
    pub policy: Policy,
    pub value: ValueFunction,
}

/// `R(μ)`: optimal feedback against `mu` and the flow it induces from the
/// problem's initial law.
pub fn best_response(problem: &MfgProblem, mu: &MeasureFlow, tie: TieBreak) -> Result<BestResponse> {
    let chain = problem.chain_for(mu)?;
    let (value, policy) = solve_best_response(&chain, problem.cost(), mu, tie)?;
    let flow = push_forward(&chain, &policy, problem.initial())?;
    Ok(BestResponse { flow, policy, value })
}

/// Size limits for [`brute_force_best_response`].
pub const BRUTE_FORCE_MAX_STEPS: usize = 3;
pub const BRUTE_FORCE_MAX_STATES: usize = 5;
pub const BRUTE_FORCE_MAX_CONTROLS: usize = 3;

/// Best response by enumerating every Markov policy. Each candidate policy is
/// evaluated by its own backward recursion; the value of `(k, i, u)` is the
/// smallest value over all continuations that play `u` at `(k, i)`.
pub fn brute_force_best_response(
    chain: &MarkovChainModel,
    cost: &CostModel,
    mu: &MeasureFlow,
    tie: TieBreak,
) -> Result<(ValueFunction, Policy)> {
    let n = chain.time().steps();
    let m = chain.grid().len();
    let nk = chain.controls().len();
    if n > BRUTE_FORCE_MAX_STEPS || m > BRUTE_FORCE_MAX_STATES || nk > BRUTE_FORCE_MAX_CONTROLS {
        return Err(Error::InstanceTooLarge(format!(
            "N = {n}, M = {m}, K = {nk}; limits are {BRUTE_FORCE_MAX_STEPS}, \
             {BRUTE_FORCE_MAX_STATES}, {BRUTE_FORCE_MAX_CONTROLS}"
        )));
    }
    let stage = stage_costs(chain, cost, mu)?;
    let dt = chain.time().dt();
    let mut best = vec![vec![vec![f64::INFINITY; nk]; m]; n];

    struct Walk<'a> {
        chain: &'a MarkovChainModel,
        stage: &'a StageCosts,
        best: &'a mut Vec<Vec<Vec<f64>>>,
        m: usize,
        nk: usize,
        dt: f64,
    }

    impl Walk<'_> {
        fn descend(&mut self, k: usize, next: &[f64]) {
            let combos = self.nk.pow(self.m as u32);
            let mut assignment = vec![0usize; self.m];
            for code in 0..combos {
                let mut c = code;
                for slot in assignment.iter_mut() {
                    *slot = c % self.nk;
                    c /= self.nk;
                }
                let values: Vec<f64> = (0..self.m)
                    .map(|i| {
                        let u = assignment[i];
                        (self.stage.running[k][i] + self.stage.control[k][i * self.nk + u]) * self.dt
                            + continuation(self.chain.transition(k, i, u), next, i)
                    })
                    .collect();
                for (i, &v) in values.iter().enumerate() {
                    let slot = &mut self.best[k][i][assignment[i]];
                    if v < *slot {
                        *slot = v;
                    }
                }
                if k > 0 {
                    self.descend(k - 1, &values);
                }
            }
        }
    }

    if n > 0 {
        let mut walk = Walk {
            chain,
            stage: &stage,
            best: &mut best,
            m,
            nk,
            dt,
        };
        walk.descend(n - 1, &stage.terminal);
    }

    let mut values = vec![Vec::new(); n + 1];
    let mut controls = vec![Vec::new(); n];
    values[n] = stage.terminal.clone();
    for k in 0..n {
        let row: Vec<(usize, f64)> = (0..m)
            .map(|i| select((0..nk).map(|u| (u, best[k][i][u], chain.drift(k, i, u))), tie))
            .collect();
        controls[k] = row.iter().map(|&(u, _)| u).collect();
        values[k] = row.iter().map(|&(_, v)| v).collect();
    }
    Ok((ValueFunction { values }, Policy { controls }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostModel, Interaction};

    fn setup(points: &[f64], horizon: f64, steps: usize) -> (Arc<StateGrid>, TimeGrid) {
        (
            Arc::new(StateGrid::from_points(points.to_vec()).unwrap()),
            TimeGrid::new(horizon, steps).unwrap(),
        )
    }

    #[test]
    fn zero_drift_row() {
        let (g, t) = setup(&[0.0, 0.1, 0.2], 0.01, 1);
        let dyn_ = Dynamics::affine(0.0, 0.0, 1.0, 1.0).unwrap();
        let u = ControlSet::new(vec![0.0]).unwrap();
        let chain = build_chain(&dyn_, &g, &t, &u, None).unwrap();
        let p = chain.transition(0, 1, 0);
        assert!((p.up - 0.5).abs() < 1e-12);
        assert!((p.down - 0.5).abs() < 1e-12);
        assert!(p.stay.abs() < 1e-12);
        let edge = chain.transition(0, 0, 0);
        assert_eq!(edge.down, 0.0);
        assert!((edge.stay - 0.5).abs() < 1e-12);
    }

    #[test]
    fn positive_drift_row() {
        let (g, t) = setup(&[0.0, 0.1, 0.2], 0.01, 1);
        let dyn_ = Dynamics::affine(1.0, 0.0, 0.0, 0.0).unwrap();
        let u = ControlSet::new(vec![0.0]).unwrap();
        let chain = build_chain(&dyn_, &g, &t, &u, None).unwrap();
        let p = chain.transition(0, 1, 0);
        assert!((p.up - 0.1).abs() < 1e-12);
        assert_eq!(p.down, 0.0);
        assert!((p.stay - 0.9).abs() < 1e-12);
    }

    #[test]
    fn cfl_failure_reports_required_step() {
        let (g, t) = setup(&[0.0, 0.1, 0.2], 0.02, 1);
        let dyn_ = Dynamics::affine(0.0, 0.0, 1.0, 1.0).unwrap();
        let u = ControlSet::new(vec![0.0]).unwrap();
        match build_chain(&dyn_, &g, &t, &u, None) {
            Err(Error::Cfl {
                required_dt,
                required_steps,
                ..
            }) => {
                assert!((required_dt - 0.01).abs() < 1e-12);
                assert_eq!(required_steps, 2);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
        assert!(check_cfl(&dyn_, &g, &t, &u).is_err());
    }

    #[test]
    fn mean_field_chain_needs_flow() {
        let (g, t) = setup(&[0.0, 0.1, 0.2], 0.01, 1);
        let shift = crate::model::MeanShift::clamped_mean(1.0, 1.0).unwrap();
        let dyn_ = Dynamics::ou_mean_field(0.0, shift, 0.1).unwrap();
        let u = ControlSet::new(vec![0.0]).unwrap();
        assert!(matches!(build_chain(&dyn_, &g, &t, &u, None), Err(Error::MissingFlow)));
    }

    fn single_node_problem(tie: TieBreak) -> (Policy, ValueFunction) {
        let (g, t) = setup(&[0.0, 1.0], 1.0, 1);
        let dyn_ = Dynamics::affine(0.0, 0.0, 0.0, 0.0).unwrap();
        let u = ControlSet::new(vec![-1.0, 0.0, 1.0]).unwrap();
        let chain = build_chain(&dyn_, &g, &t, &u, None).unwrap();
        let cost = CostModel::new(Interaction::Zero, |_, _, a| (a * a - 1.0).powi(2), Interaction::Zero);
        let mu = MeasureFlow::constant(&DiscreteMeasure::dirac(g.clone(), 0).unwrap(), 1);
        let (v, p) = solve_best_response(&chain, &cost, &mu, tie).unwrap();
        (p, v)
    }

    #[test]
    fn tie_breaking_by_drift() {
        // zero drift everywhere: ties fall back to index order
        let (p, v) = single_node_problem(TieBreak::Lowest);
        assert_eq!(p.at(0, 0), 0);
        assert_eq!(v.at(0, 0), 0.0);
        let (p, _) = single_node_problem(TieBreak::Highest);
        assert_eq!(p.at(0, 0), 2);

        let (g, t) = setup(&[0.0, 1.0, 2.0], 0.1, 1);
        let dyn_ = Dynamics::affine(0.0, 0.0, 1.0, 0.0).unwrap();
        let u = ControlSet::new(vec![-1.0, 1.0]).unwrap();
        let chain = build_chain(&dyn_, &g, &t, &u, None).unwrap();
        let cost = CostModel::new(Interaction::Zero, |_, _, _| 0.0, Interaction::Zero);
        let mu = MeasureFlow::constant(&DiscreteMeasure::dirac(g.clone(), 1).unwrap(), 1);
        let (_, lo) = solve_best_response(&chain, &cost, &mu, TieBreak::Lowest).unwrap();
        let (_, hi) = solve_best_response(&chain, &cost, &mu, TieBreak::Highest).unwrap();
        assert_eq!(lo.at(0, 1), 0);
        assert_eq!(hi.at(0, 1), 1);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let (g, t) = setup(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 1.0, 1);
        let dyn_ = Dynamics::affine(0.0, 0.0, 0.0, 0.0).unwrap();
        let u = ControlSet::new(vec![0.0]).unwrap();
        let chain = build_chain(&dyn_, &g, &t, &u, None).unwrap();
        let cost = CostModel::new(Interaction::Zero, |_, _, _| 0.0, Interaction::Zero);
        let mu = MeasureFlow::constant(&DiscreteMeasure::dirac(g.clone(), 0).unwrap(), 1);
        assert!(matches!(
            brute_force_best_response(&chain, &cost, &mu, TieBreak::Lowest),
            Err(Error::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn push_forward_conserves_mass() {
        let (g, t) = setup(&[0.0, 0.25, 0.5, 0.75, 1.0], 1.0, 8);
        let dyn_ = Dynamics::affine(0.3, 0.0, 1.0, 0.3).unwrap();
        let u = ControlSet::linspace(-1.0, 1.0, 3).unwrap();
        let chain = build_chain(&dyn_, &g, &t, &u, None).unwrap();
        let policy = Policy {
            controls: (0..8).map(|k| (0..5).map(|i| (i + k) % 3).collect()).collect(),
        };
        let init = DiscreteMeasure::dirac(g.clone(), 2).unwrap();
        let flow = push_forward(&chain, &policy, &init).unwrap();
        for mu in flow.measures() {
            let total: f64 = mu.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(mu.weights().iter().all(|&w| w >= 0.0));
        }
    }
}
