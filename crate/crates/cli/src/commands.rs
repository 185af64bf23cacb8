//! Subcommand implementations. Each one returns a [`Status`] and leaves its
//! files plus a `summary.txt` of `key: value` lines in the output directory.

use std::fmt::{Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use submfg::chain::{brute_force_best_response, build_chain, solve_best_response, TieBreak};
use submfg::common_noise::{cn_learn_from_above, cn_learn_from_below, CnSolution, CnTrace};
use submfg::io::{self, TraceRow};
use submfg::lq::{compare_to_grid, solve_riccati, RiccatiOptions};
use submfg::measures::{DiscreteMeasure, MeasureFlow, StateGrid, TimeGrid, CDF_TOL};
use submfg::mfg::{
    expected_cost, learn_from_above_with, learn_from_below, learn_from_below_with, random_flow, random_measure,
    verify_monotone_best_response, IterationTrace, MfgSolution,
};
use submfg::model::{check_submodularity, sample_times, shift_monotonicity_defect, ControlSet};
use submfg::MfgProblem;

use crate::config::{LqCheckConfig, RunConfig, TieBreakConfig};
use crate::{CliError, CommandKind, RunArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Fail,
    Unconverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Unconverged => 4,
        }
    }
}

/// Ordered `key: value` report.
#[derive(Debug, Default, Clone)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// Parses `summary.txt` back into a [`Summary`].
pub fn read_summary(path: &Path) -> Result<Summary, CliError> {
    let text = fs::read_to_string(path)?;
    let mut summary = Summary::default();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(": ") {
            summary.push(k, v);
        }
    }
    Ok(summary)
}

fn out_dirs(args: &RunArgs, configs: &[(PathBuf, RunConfig)]) -> Vec<PathBuf> {
    let single = configs.len() == 1;
    configs
        .iter()
        .map(|(path, cfg)| {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            let name = cfg.display_name(stem);
            match (&args.out, single) {
                (Some(out), true) => out.clone(),
                (Some(out), false) => out.join(name),
                (None, true) => cfg.output.dir.clone(),
                (None, false) => cfg.output.dir.join(name),
            }
        })
        .collect()
}

/// Loads every configuration, runs them on a pool of `--jobs` threads and
/// returns the most severe exit code.
pub fn run_command(kind: CommandKind, args: &RunArgs) -> i32 {
    let mut configs = Vec::new();
    for path in &args.configs {
        match RunConfig::load(path) {
            Ok(mut cfg) => {
                if let Some(tol) = args.tol {
                    cfg.solver.tol = tol;
                }
                if let Some(max_iter) = args.max_iter {
                    cfg.solver.max_iter = max_iter;
                }
                configs.push((path.clone(), cfg));
            }
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        }
    }
    let dirs = out_dirs(args, &configs);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    let results: Vec<Result<(Status, Summary), CliError>> = pool.install(|| {
        configs
            .par_iter()
            .zip(dirs.par_iter())
            .map(|((path, cfg), dir)| {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
                execute(kind, cfg, &cfg.display_name(stem), dir)
            })
            .collect()
    });
    let mut code = 0;
    for (((path, _), dir), result) in configs.iter().zip(&dirs).zip(results) {
        match result {
            Ok((status, summary)) => {
                println!("== {} -> {}", path.display(), dir.display());
                print!("{}", summary.render());
                code = code.max(status.exit_code());
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                code = code.max(e.exit_code());
            }
        }
    }
    code
}

/// Runs one command for one configuration.
pub fn execute(kind: CommandKind, cfg: &RunConfig, name: &str, out: &Path) -> Result<(Status, Summary), CliError> {
    fs::create_dir_all(out)?;
    let (status, mut summary) = match kind {
        CommandKind::Solve => cmd_solve(cfg, out)?,
        CommandKind::Verify => cmd_verify(cfg, out)?,
        CommandKind::LqCheck => cmd_lq_check(cfg, out)?,
        CommandKind::CommonNoise => cmd_common_noise(cfg, out)?,
        CommandKind::Sweep => cmd_sweep(cfg, out)?,
    };
    let mut full = Summary::default();
    full.push("name", name);
    full.push(
        "status",
        match status {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Unconverged => "unconverged",
        },
    );
    full.lines.append(&mut summary.lines);
    full.write(&out.join("summary.txt"))?;
    Ok((status, full))
}

fn ties(cfg: &RunConfig) -> (TieBreak, TieBreak) {
    match cfg.solver.tie_break {
        TieBreakConfig::Extremal => (TieBreak::Lowest, TieBreak::Highest),
        TieBreakConfig::Lowest => (TieBreak::Lowest, TieBreak::Lowest),
        TieBreakConfig::Highest => (TieBreak::Highest, TieBreak::Highest),
    }
}

fn write_run(
    out: &Path,
    tag: &str,
    problem: &MfgProblem,
    solution: &MfgSolution,
    trace: &IterationTrace,
    iterates: bool,
) -> Result<(), CliError> {
    io::write_flow_csv(out.join(format!("{tag}_flow.csv")), &solution.flow)?;
    io::write_trace_csv(out.join(format!("{tag}_trace.csv")), trace)?;
    io::write_policy_csv(
        out.join(format!("{tag}_policy.csv")),
        problem.grid(),
        problem.controls().values(),
        &solution.policy,
        &solution.value,
    )?;
    if iterates {
        let dir = out.join("iterates");
        fs::create_dir_all(&dir)?;
        for (n, flow) in trace.flows.iter().enumerate() {
            io::write_flow_csv(dir.join(format!("{tag}_{n:03}.csv")), flow)?;
        }
    }
    Ok(())
}

fn push_solution(summary: &mut Summary, tag: &str, problem: &MfgProblem, s: &MfgSolution) -> Result<(), CliError> {
    summary.push(&format!("{tag}_iterations"), s.iterations);
    summary.push(&format!("{tag}_residual"), s.residual);
    summary.push(&format!("{tag}_converged"), s.converged);
    summary.push(&format!("{tag}_terminal_mean"), s.flow.terminal().mean());
    summary.push(&format!("{tag}_cost"), expected_cost(problem, &s.policy, &s.flow)?);
    Ok(())
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<(Status, Summary), CliError> {
    let problem = cfg.build_problem()?;
    let opts = cfg.solver.learning();
    let (tie_lo, tie_hi) = ties(cfg);
    let (below, below_trace) = learn_from_below_with(&problem, tie_lo, &opts)?;
    write_run(out, "below", &problem, &below, &below_trace, cfg.output.write_iterates)?;
    let (above, above_trace) = learn_from_above_with(&problem, tie_hi, &opts)?;
    write_run(out, "above", &problem, &above, &above_trace, cfg.output.write_iterates)?;

    let distance = below.flow.distance(&above.flow)?;
    let mut summary = Summary::default();
    summary.push("states", problem.grid().len());
    summary.push("steps", problem.time().steps());
    summary.push("controls", problem.controls().len());
    summary.push("lower", problem.grid().lower());
    summary.push("upper", problem.grid().upper());
    push_solution(&mut summary, "below", &problem, &below)?;
    push_solution(&mut summary, "above", &problem, &above)?;
    summary.push("min_max_distance", distance);
    summary.push("min_equals_max", distance <= cfg.solver.tol);
    summary.push("ordered", below.flow.leq(&above.flow)?);
    let status = if below.converged && above.converged {
        Status::Pass
    } else {
        Status::Unconverged
    };
    Ok((status, summary))
}

/// Largest defect of the lattice laws and of the order/meet/join
/// consistency on one triple.
pub fn lattice_law_defect(a: &DiscreteMeasure, b: &DiscreteMeasure, c: &DiscreteMeasure) -> Result<f64, CliError> {
    let d = |x: &DiscreteMeasure, y: &DiscreteMeasure| x.kolmogorov_distance(y);
    let mut worst: f64 = 0.0;
    worst = worst.max(d(&a.meet(b)?, &b.meet(a)?)?);
    worst = worst.max(d(&a.join(b)?, &b.join(a)?)?);
    worst = worst.max(d(&a.meet(&b.meet(c)?)?, &a.meet(b)?.meet(c)?)?);
    worst = worst.max(d(&a.join(&b.join(c)?)?, &a.join(b)?.join(c)?)?);
    worst = worst.max(d(&a.meet(a)?, a)?);
    worst = worst.max(d(&a.join(a)?, a)?);
    worst = worst.max(d(&a.meet(&a.join(b)?)?, a)?);
    worst = worst.max(d(&a.join(&a.meet(b)?)?, a)?);
    let le = a.st_le(b)?;
    let meet_is_a = d(&a.meet(b)?, a)? <= CDF_TOL;
    let join_is_b = d(&a.join(b)?, b)? <= CDF_TOL;
    if le != meet_is_a || le != join_is_b {
        worst = worst.max(1.0);
    }
    Ok(worst)
}

/// Three-step, five-state, three-control instance built from the configured
/// model, with a horizon short enough for the CFL condition.
fn tiny_instance(problem: &MfgProblem) -> Result<(std::sync::Arc<StateGrid>, TimeGrid, ControlSet), CliError> {
    let g = problem.grid();
    let grid = std::sync::Arc::new(StateGrid::uniform(g.lower(), g.upper(), 5)?);
    let u = problem.controls().values();
    let mut picks = vec![u[0], u[u.len() / 2], u[u.len() - 1]];
    picks.dedup();
    let controls = ControlSet::new(picks)?;
    let dynamics = problem.dynamics();
    let shift = dynamics.mean_shift().map_or(0.0, |s| s.bound());
    let horizon = problem.time().horizon();
    let mut rate: f64 = 0.0;
    for &x in grid.points() {
        let vol = dynamics.local_vol(x);
        for &a in controls.values() {
            for s in [-shift, shift] {
                for t in [0.0, horizon] {
                    let b = dynamics.drift(t, x, a, s);
                    rate = rate.max(vol * vol / (grid.dx() * grid.dx()) + b.abs() / grid.dx());
                }
            }
        }
    }
    let tiny_horizon = if rate > 0.0 { horizon.min(3.0 / rate) } else { horizon };
    Ok((grid, TimeGrid::new(tiny_horizon, 3)?, controls))
}

fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<(Status, Summary), CliError> {
    let problem = cfg.build_problem()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.solver.seed);
    let grid = problem.grid();
    let mut summary = Summary::default();
    let mut ok = true;

    let mut pairs = Vec::new();
    for _ in 0..cfg.solver.monotone_pairs {
        let a = random_measure(grid, &mut rng)?;
        let b = random_measure(grid, &mut rng)?;
        pairs.push((a.meet(&b)?, a.join(&b)?));
    }
    let stride = (grid.len() / 10).max(1);
    for i in (0..grid.len() - 1).step_by(stride) {
        pairs.push((
            DiscreteMeasure::dirac(grid.clone(), i)?,
            DiscreteMeasure::dirac(grid.clone(), i + 1)?,
        ));
    }
    let times = sample_times(problem.time(), 11);
    let sub = check_submodularity(problem.cost(), grid, &times, problem.time().horizon(), &pairs, 1e-10)?;
    summary.push("submodularity_samples", sub.samples);
    summary.push("submodularity_max_violation", sub.max_violation);
    if let Some(w) = &sub.witness {
        summary.push("submodularity_witness", format!("x={} x_bar={} pair={}", w.x, w.x_bar, w.pair));
    }
    summary.push("submodularity", sub.passed());
    ok &= sub.passed();

    if let Some(shift) = problem.dynamics().mean_shift() {
        let defect = shift_monotonicity_defect(shift, &pairs);
        summary.push("shift_monotone_defect", defect);
        ok &= defect <= 1e-12;
    }

    let convexity = problem.cost().control_convexity_defect(problem.controls(), grid, &times);
    summary.push("control_convexity_defect", convexity);
    ok &= convexity <= 1e-10;

    let mut drift_defect: f64 = 0.0;
    let shift_bound = problem.dynamics().mean_shift().map_or(0.0, |s| s.bound());
    for &t in &times {
        for &x in grid.points() {
            for s in [-shift_bound, shift_bound] {
                for w in problem.controls().values().windows(2) {
                    let d = problem.dynamics();
                    drift_defect = drift_defect.max(d.drift(t, x, w[0], s) - d.drift(t, x, w[1], s));
                }
            }
        }
    }
    summary.push("drift_monotone_defect", drift_defect);
    ok &= drift_defect <= 1e-12;

    let report = verify_monotone_best_response(&problem, cfg.solver.monotone_pairs, cfg.solver.seed)?;
    summary.push("best_response_pairs", report.pairs);
    summary.push("best_response_violations", report.violations.len());
    summary.push("best_response_max_excess", report.max_excess);
    ok &= report.passed();

    let mut lattice: f64 = 0.0;
    for _ in 0..200 {
        let a = random_measure(grid, &mut rng)?;
        let b = random_measure(grid, &mut rng)?;
        let c = random_measure(grid, &mut rng)?;
        lattice = lattice.max(lattice_law_defect(&a, &b, &c)?);
        let ab = a.meet(&b)?;
        lattice = lattice.max(lattice_law_defect(&ab, &a, &c)?);
    }
    summary.push("lattice_law_defect", lattice);
    ok &= lattice <= CDF_TOL;

    let (tiny_grid, tiny_time, tiny_controls) = tiny_instance(&problem)?;
    let mut tiny_rng = ChaCha8Rng::seed_from_u64(cfg.solver.seed);
    let mut dp_value_gap: f64 = 0.0;
    let mut dp_policy_mismatch = 0;
    for tie in [TieBreak::Lowest, TieBreak::Highest] {
        let initial = DiscreteMeasure::dirac(tiny_grid.clone(), 2)?;
        let tiny = MfgProblem::new(
            tiny_grid.clone(),
            tiny_time,
            tiny_controls.clone(),
            problem.dynamics().clone(),
            problem.cost().clone(),
            initial,
        )?;
        let mu = random_flow(&tiny, &mut tiny_rng)?;
        let chain = build_chain(problem.dynamics(), &tiny_grid, &tiny_time, &tiny_controls, Some(&mu))?;
        let (v, p) = solve_best_response(&chain, problem.cost(), &mu, tie)?;
        let (bv, bp) = brute_force_best_response(&chain, problem.cost(), &mu, tie)?;
        for (row, brow) in v.values.iter().zip(&bv.values) {
            for (a, b) in row.iter().zip(brow) {
                dp_value_gap = dp_value_gap.max((a - b).abs());
            }
        }
        dp_policy_mismatch += p
            .controls
            .iter()
            .zip(&bp.controls)
            .flat_map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y))
            .count();
    }
    summary.push("dp_value_gap", dp_value_gap);
    summary.push("dp_policy_mismatches", dp_policy_mismatch);
    ok &= dp_value_gap <= 1e-12 && dp_policy_mismatch == 0;

    summary.write(&out.join("verify.txt"))?;
    Ok((if ok { Status::Pass } else { Status::Fail }, summary))
}

#[derive(Debug, Serialize)]
struct RefinementRow {
    states: usize,
    steps: usize,
    controls: usize,
    mean_error: f64,
    value_error: f64,
    iterations: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Solver(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Solver(e.into()))
}

fn cmd_lq_check(cfg: &RunConfig, out: &Path) -> Result<(Status, Summary), CliError> {
    let params = cfg
        .lq_params()
        .ok_or_else(|| CliError::Config("lq-check needs affine dynamics with an lq cost".into()))?;
    let check = cfg.lq_check.clone().unwrap_or(LqCheckConfig {
        oracle_steps: 4000,
        tolerance: 2e-2,
        band: 4.0,
        refinement: Vec::new(),
    });
    let problem = cfg.build_problem()?;
    let initial = problem.initial();
    let mean0 = initial.mean();
    let var0 = initial.integrate(|x| (x - mean0).powi(2));
    let controls = problem.controls();
    let opts = RiccatiOptions {
        steps: check.oracle_steps,
        control_bounds: Some((controls.min(), controls.max())),
        band: check.band,
        ..RiccatiOptions::default()
    };
    let horizon = problem.time().horizon();
    let mut summary = Summary::default();
    let oracle = match solve_riccati(&params, horizon, mean0, var0, &opts) {
        Ok(oracle) => oracle,
        Err(submfg::Error::ClippingActive { t, x, control }) => {
            summary.push("clipping_active", true);
            summary.push("clipping_witness", format!("t={t} x={x} control={control}"));
            return Ok((Status::Fail, summary));
        }
        Err(e) => return Err(e.into()),
    };
    io::write_riccati_csv(out.join("riccati.csv"), &oracle)?;
    summary.push("clipping_active", false);
    summary.push("oracle_iterations", oracle.iterations);
    summary.push("oracle_self_gap", oracle.mean_gap(&oracle));

    let learning = cfg.solver.learning();
    let (below, _) = learn_from_below(&problem, &learning)?;
    io::write_flow_csv(out.join("lq_flow.csv"), &below.flow)?;
    let cmp = compare_to_grid(&oracle, &below, problem.time(), check.band);
    summary.push("mean_error", cmp.mean_error);
    summary.push("value_error", cmp.value_error);
    summary.push("tolerance", check.tolerance);
    let mut ok = below.converged && cmp.mean_error <= check.tolerance;

    if !check.refinement.is_empty() {
        let mut rows = Vec::new();
        for level in &check.refinement {
            let level_cfg = cfg.at_level(level);
            let p = level_cfg.build_problem()?;
            let (s, _) = learn_from_below(&p, &learning)?;
            ok &= s.converged;
            let c = compare_to_grid(&oracle, &s, p.time(), check.band);
            rows.push(RefinementRow {
                states: level.states,
                steps: level.steps,
                controls: p.controls().len(),
                mean_error: c.mean_error,
                value_error: c.value_error,
                iterations: s.iterations,
            });
        }
        write_csv(&out.join("refinement.csv"), &rows)?;
        let decreasing = rows.windows(2).all(|w| w[1].mean_error < w[0].mean_error);
        summary.push(
            "refinement_errors",
            rows.iter().map(|r| r.mean_error.to_string()).collect::<Vec<_>>().join(" "),
        );
        summary.push("refinement_decreasing", decreasing);
        ok &= decreasing;
    }
    Ok((if ok { Status::Pass } else { Status::Fail }, summary))
}

fn cn_trace_rows(trace: &CnTrace) -> Vec<TraceRow> {
    (0..trace.residuals.len())
        .map(|n| TraceRow {
            iter: n + 1,
            residual: trace.residuals[n],
            monotone: trace.monotone[n],
            cost: trace.costs[n],
        })
        .collect()
}

/// `max_k |Σ_j P(j) E[X_k | j] - E[X_k]|` for the final best response.
fn tower_gap(solution: &CnSolution) -> f64 {
    let flow = &solution.response.flow;
    let tree = flow.tree();
    (0..=flow.steps())
        .map(|k| {
            let level = tree.level_of_step(k);
            let mixed: f64 = (0..=level).map(|j| tree.prob(level, j) * flow.get(k, j)).sum();
            (mixed - solution.response.unconditional_means[k]).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest gap between tree-node means and the flow means at tree times.
pub fn node_gap(solution: &CnSolution, flow: &MeasureFlow) -> f64 {
    let tree = solution.flow.tree();
    let means = flow.means();
    (0..=tree.depth())
        .flat_map(|level| {
            let target = means[level * tree.steps_per_level()];
            solution.flow.at_level(level).iter().map(move |m| (m - target).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

fn cmd_common_noise(cfg: &RunConfig, out: &Path) -> Result<(Status, Summary), CliError> {
    let cn = cfg.build_common_noise()?;
    let opts = cfg.solver.learning();
    let (below, below_trace) = cn_learn_from_below(&cn, &opts)?;
    let (above, above_trace) = cn_learn_from_above(&cn, &opts)?;
    io::write_conditional_csv(out.join("cn_below.csv"), &below.flow.rows())?;
    io::write_conditional_csv(out.join("cn_above.csv"), &above.flow.rows())?;
    io::write_trace_rows(out.join("cn_below_trace.csv"), &cn_trace_rows(&below_trace))?;
    io::write_trace_rows(out.join("cn_above_trace.csv"), &cn_trace_rows(&above_trace))?;

    let mut summary = Summary::default();
    summary.push("depth", cn.tree().depth());
    summary.push("sigma0", cn.tree().sigma0());
    for (tag, s) in [("below", &below), ("above", &above)] {
        summary.push(&format!("{tag}_iterations"), s.iterations);
        summary.push(&format!("{tag}_residual"), s.residual);
        summary.push(&format!("{tag}_converged"), s.converged);
        summary.push(&format!("{tag}_root_terminal_mean"), s.response.unconditional_means[cn.time().steps()]);
    }
    let ordered = below.flow.leq(&above.flow);
    let tower = tower_gap(&below).max(tower_gap(&above));
    summary.push("ordered", ordered);
    summary.push("min_max_distance", below.flow.distance(&above.flow));
    summary.push("tower_gap", tower);
    let mut ok = ordered && tower <= 1e-10;

    if let Some(tol) = cfg.common_noise.as_ref().and_then(|c| c.continuity_tol) {
        let problem = cfg.build_problem()?;
        let (tie_lo, tie_hi) = ties(cfg);
        let (mfg_below, _) = learn_from_below_with(&problem, tie_lo, &opts)?;
        let (mfg_above, _) = learn_from_above_with(&problem, tie_hi, &opts)?;
        let gap = node_gap(&below, &mfg_below.flow).max(node_gap(&above, &mfg_above.flow));
        summary.push("continuity_gap", gap);
        summary.push("continuity_tol", tol);
        ok &= gap <= tol;
    }
    let status = if !(below.converged && above.converged) {
        Status::Unconverged
    } else if ok {
        Status::Pass
    } else {
        Status::Fail
    };
    Ok((status, summary))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    states: usize,
    steps: usize,
    controls: usize,
    below_terminal_mean: f64,
    above_terminal_mean: f64,
    below_iterations: usize,
    above_iterations: usize,
    min_max_distance: f64,
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(Status, Summary), CliError> {
    let levels = match (&cfg.sweep, &cfg.lq_check) {
        (Some(s), _) => s.levels.clone(),
        (None, Some(l)) if !l.refinement.is_empty() => l.refinement.clone(),
        _ => return Err(CliError::Config("sweep needs a [sweep] section with levels".into())),
    };
    let opts = cfg.solver.learning();
    let (tie_lo, tie_hi) = ties(cfg);
    let mut rows = Vec::new();
    let mut converged = true;
    for level in &levels {
        let problem = cfg.at_level(level).build_problem()?;
        let (below, _) = learn_from_below_with(&problem, tie_lo, &opts)?;
        let (above, _) = learn_from_above_with(&problem, tie_hi, &opts)?;
        converged &= below.converged && above.converged;
        rows.push(SweepRow {
            states: level.states,
            steps: level.steps,
            controls: problem.controls().len(),
            below_terminal_mean: below.flow.terminal().mean(),
            above_terminal_mean: above.flow.terminal().mean(),
            below_iterations: below.iterations,
            above_iterations: above.iterations,
            min_max_distance: below.flow.distance(&above.flow)?,
        });
    }
    write_csv(&out.join("sweep.csv"), &rows)?;
    let mut summary = Summary::default();
    summary.push("levels", rows.len());
    for r in &rows {
        summary.push(
            &format!("level_{}x{}", r.states, r.steps),
            format!("below={} above={}", r.below_terminal_mean, r.above_terminal_mean),
        );
    }
    Ok((if converged { Status::Pass } else { Status::Unconverged }, summary))
}
