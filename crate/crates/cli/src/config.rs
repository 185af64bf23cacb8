//! Run configuration, loaded from TOML and validated into solver objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use submfg::common_noise::CommonNoiseProblem;
use submfg::model::{
    lq_model, order1_model, threshold_model_with_penalty, ControlSet, CostModel, Dynamics, Interaction, LqParams,
    MeanShift, OrderOneWeights, QuadraticCost, TimeCoef,
};
use submfg::{DiscreteMeasure, LearningOptions, MfgProblem, StateGrid, TimeGrid};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: Option<String>,
    pub grid: GridConfig,
    pub controls: ControlConfig,
    pub dynamics: DynamicsConfig,
    pub cost: CostConfig,
    pub initial: InitialLaw,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub lq_check: Option<LqCheckConfig>,
    pub common_noise: Option<CommonNoiseConfig>,
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Number of state nodes `M`.
    pub states: usize,
    /// Number of time steps `N`.
    pub steps: usize,
    pub horizon: f64,
    pub truncation: Truncation,
}

/// How the state space is cut to a bounded interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Truncation {
    Bounds { lower: f64, upper: f64 },
    /// Support of the initial law widened by `T sup|b| + width σ √T`.
    Auto { width: f64 },
}

/// Either an explicit list of control values or an evenly spaced range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlConfig {
    Values(ControlValues),
    Range(ControlRange),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlValues {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// A coefficient given either as a number or as `{ base, slope }`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Const(f64),
    Affine { base: f64, slope: f64 },
}

impl From<Coef> for TimeCoef {
    fn from(c: Coef) -> Self {
        match c {
            Coef::Const(v) => TimeCoef::constant(v),
            Coef::Affine { base, slope } => TimeCoef { base, slope },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsConfig {
    Affine { c: Coef, p: Coef, q: Coef, sigma: f64 },
    Geometric { base: f64, control_coef: f64, bound: f64, sigma: f64 },
    GeometricMeanField { shift_scale: f64, shift_bound: f64, sigma: f64 },
    OuMeanField { kappa: f64, shift_scale: f64, shift_bound: f64, sigma: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    /// `f + l = ½ n a² + ½ (m x + m̂ z)²`, `g = ½ (h x + ĥ z)²`.
    Lq {
        n: Coef,
        m: Coef,
        m_hat: Coef,
        h: Coef,
        h_hat: Coef,
        #[serde(default)]
        allow_non_submodular: bool,
    },
    /// `g = (x - 1{z ≥ 0})² + penalty 1{z ≥ 0}`, `l = a²/2`.
    Threshold {
        #[serde(default)]
        penalty: f64,
    },
    /// Interaction `∫ γ(x, y) dμ(y)` in `f` and `g`, plus an optional
    /// quadratic pull towards `target` in `g`.
    OrderOne {
        kernel: Kernel,
        #[serde(default = "one")]
        running: f64,
        #[serde(default = "one")]
        terminal: f64,
        #[serde(default = "one")]
        control: f64,
        target: Option<Target>,
    },
    /// No interaction: `g = weight (x - target)²`, `l = control a² / 2`.
    Decoupled {
        target: f64,
        weight: f64,
        #[serde(default = "one")]
        control: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `½ weight (x - y)²`.
    Quadratic { weight: f64 },
    /// `coef x y`; decreasing differences need `coef ≤ 0`.
    Bilinear { coef: f64 },
    /// `x + y`.
    Separable,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub location: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Point { x: f64 },
    Uniform { lower: f64, upper: f64 },
    TwoPoint { x1: f64, x2: f64, p1: f64 },
    Gaussian { mean: f64, std_dev: f64 },
}

/// Extreme measures used as starting points of the learning runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeConfig {
    /// Dirac masses at the two ends of the grid.
    #[default]
    GridEnds,
    /// Extremes of the ball `∫ |x|^power dμ ≤ constant`.
    Moment { constant: f64, power: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakConfig {
    /// Lowest drift from below, highest from above.
    #[default]
    Extremal,
    Lowest,
    Highest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub tie_break: TieBreakConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Random comparable flow pairs used by `verify`.
    #[serde(default = "default_pairs")]
    pub monotone_pairs: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    200
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_pairs() -> usize {
    50
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            tie_break: TieBreakConfig::default(),
            seed: default_seed(),
            monotone_pairs: default_pairs(),
        }
    }
}

impl SolverConfig {
    pub fn learning(&self) -> LearningOptions {
        LearningOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also write every learning iterate.
    #[serde(default = "yes")]
    pub write_iterates: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            write_iterates: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqCheckConfig {
    #[serde(default = "default_oracle_steps")]
    pub oracle_steps: usize,
    /// Bound on `sup_t |grid mean - reference mean|` at the configured grid.
    pub tolerance: f64,
    /// Standard deviations around the reference mean checked for clipping.
    #[serde(default = "default_band")]
    pub band: f64,
    /// Refinement levels `(states, steps, controls)`; errors must decrease.
    #[serde(default)]
    pub refinement: Vec<Level>,
}

fn default_oracle_steps() -> usize {
    4000
}

fn default_band() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub states: usize,
    pub steps: usize,
    pub controls: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonNoiseConfig {
    pub sigma0: f64,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// When set, also solve without common noise and require every tree-node
    /// mean to lie within this distance of the corresponding mean.
    pub continuity_tol: Option<f64>,
}

fn default_depth() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub levels: Vec<Level>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn display_name(&self, fallback: &str) -> String {
        self.name.clone().unwrap_or_else(|| fallback.to_string())
    }

    /// Same model on a different discretisation.
    pub fn at_level(&self, level: &Level) -> Self {
        let mut cfg = self.clone();
        cfg.grid.states = level.states;
        cfg.grid.steps = level.steps;
        if let (Some(count), ControlConfig::Range(ControlRange { count: c, .. })) = (level.controls, &mut cfg.controls) {
            *c = count;
        }
        cfg
    }

    pub fn build_controls(&self) -> Result<ControlSet, CliError> {
        Ok(match &self.controls {
            ControlConfig::Values(ControlValues { values }) => ControlSet::new(values.clone())?,
            ControlConfig::Range(ControlRange { min, max, count }) => ControlSet::linspace(*min, *max, *count)?,
        })
    }

    pub fn build_time(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::new(self.grid.horizon, self.grid.steps)?)
    }

    pub fn build_dynamics(&self) -> Result<Dynamics, CliError> {
        Ok(match &self.dynamics {
            DynamicsConfig::Affine { c, p, q, sigma } => Dynamics::affine(*c, *p, *q, *sigma)?,
            DynamicsConfig::Geometric {
                base,
                control_coef,
                bound,
                sigma,
            } => Dynamics::geometric_linear(*base, *control_coef, *bound, *sigma)?,
            DynamicsConfig::GeometricMeanField {
                shift_scale,
                shift_bound,
                sigma,
            } => Dynamics::geometric_mean_field(MeanShift::clamped_mean(*shift_scale, *shift_bound)?, *sigma)?,
            DynamicsConfig::OuMeanField {
                kappa,
                shift_scale,
                shift_bound,
                sigma,
            } => Dynamics::ou_mean_field(*kappa, MeanShift::clamped_mean(*shift_scale, *shift_bound)?, *sigma)?,
        })
    }

    /// Whether the configuration declares a structure meant to satisfy the
    /// decreasing-differences condition.
    pub fn claims_submodular(&self) -> bool {
        !matches!(
            self.cost,
            CostConfig::Lq {
                allow_non_submodular: true,
                ..
            }
        )
    }

    pub fn build_cost(&self) -> Result<CostModel, CliError> {
        let horizon = self.grid.horizon;
        Ok(match &self.cost {
            CostConfig::Lq {
                n,
                m,
                m_hat,
                h,
                h_hat,
                allow_non_submodular,
            } => {
                let cost = QuadraticCost {
                    n: (*n).into(),
                    m: (*m).into(),
                    m_hat: (*m_hat).into(),
                    h: (*h).into(),
                    h_hat: (*h_hat).into(),
                };
                if !allow_non_submodular {
                    match &self.dynamics {
                        DynamicsConfig::Affine { c, p, q, sigma } => {
                            let params = LqParams {
                                c: (*c).into(),
                                p: (*p).into(),
                                q: (*q).into(),
                                cost,
                                sigma: *sigma,
                            };
                            return Ok(lq_model(&params, horizon)?.1);
                        }
                        _ => cost.check(horizon)?,
                    }
                }
                cost.cost_model()
            }
            CostConfig::Threshold { penalty } => threshold_model_with_penalty(*penalty),
            CostConfig::OrderOne {
                kernel,
                running,
                terminal,
                control,
                target,
            } => {
                let weights = OrderOneWeights {
                    running: *running,
                    terminal: *terminal,
                    control: *control,
                };
                let cost = match *kernel {
                    Kernel::Quadratic { weight } => order1_model(move |x, y| 0.5 * weight * (x - y).powi(2), weights),
                    Kernel::Bilinear { coef } => order1_model(move |x, y| coef * x * y, weights),
                    Kernel::Separable => order1_model(|x, y| x + y, weights),
                };
                match *target {
                    Some(Target { location, weight }) => {
                        cost.with_terminal(Interaction::separable(move |_, x| weight * (x - location).powi(2)))
                    }
                    None => cost,
                }
            }
            CostConfig::Decoupled {
                target,
                weight,
                control,
            } => {
                let (target, weight, control) = (*target, *weight, *control);
                CostModel::new(
                    Interaction::Zero,
                    move |_, _, a| 0.5 * control * a * a,
                    Interaction::separable(move |_, x| weight * (x - target).powi(2)),
                )
            }
        })
    }

    /// `(lower, upper)` of the truncated state space.
    pub fn bounds(&self) -> Result<(f64, f64), CliError> {
        match self.grid.truncation {
            Truncation::Bounds { lower, upper } => Ok((lower, upper)),
            Truncation::Auto { width } => {
                let (lo, hi) = match self.initial {
                    InitialLaw::Point { x } => (x, x),
                    InitialLaw::Uniform { lower, upper } => (lower, upper),
                    InitialLaw::TwoPoint { x1, x2, .. } => (x1.min(x2), x1.max(x2)),
                    InitialLaw::Gaussian { mean, std_dev } => (mean - 3.0 * std_dev, mean + 3.0 * std_dev),
                };
                let t = self.grid.horizon;
                let dynamics = self.build_dynamics()?;
                let controls = self.build_controls()?;
                let shift = dynamics.mean_shift().map_or(0.0, |s| s.bound());
                // drift bound over a box that already contains the widened support
                let reach = |lo: f64, hi: f64| {
                    let mut b: f64 = 0.0;
                    for x in [lo, hi] {
                        for &a in controls.values() {
                            for s in [-shift, shift] {
                                b = b.max(dynamics.drift(0.0, x, a, s).abs());
                                b = b.max(dynamics.drift(t, x, a, s).abs());
                            }
                        }
                    }
                    b
                };
                let mut pad = width * dynamics.sigma() * t.sqrt() + t * reach(lo, hi);
                for _ in 0..4 {
                    pad = width * dynamics.sigma() * t.sqrt() + t * reach(lo - pad, hi + pad);
                }
                if dynamics.is_geometric() {
                    return Err(CliError::Config(
                        "automatic truncation is not available for geometric dynamics".into(),
                    ));
                }
                Ok((lo - pad, hi + pad))
            }
        }
    }

    pub fn build_grid(&self) -> Result<Arc<StateGrid>, CliError> {
        let (lower, upper) = self.bounds()?;
        Ok(Arc::new(StateGrid::uniform(lower, upper, self.grid.states)?))
    }

    pub fn build_initial(&self, grid: &Arc<StateGrid>) -> Result<DiscreteMeasure, CliError> {
        let g = grid.clone();
        Ok(match self.initial {
            InitialLaw::Point { x } => DiscreteMeasure::point_mass(g, x)?,
            InitialLaw::Uniform { lower, upper } => DiscreteMeasure::uniform_on(g, lower, upper)?,
            InitialLaw::TwoPoint { x1, x2, p1 } => DiscreteMeasure::mixture_of_points(g, &[(x1, p1), (x2, 1.0 - p1)])?,
            InitialLaw::Gaussian { mean, std_dev } => DiscreteMeasure::truncated_gaussian(g, mean, std_dev)?,
        })
    }

    /// Validated problem: grid, CFL, sign conditions and initial law.
    pub fn build_problem(&self) -> Result<MfgProblem, CliError> {
        let grid = self.build_grid()?;
        let initial = self.build_initial(&grid)?;
        let problem = MfgProblem::new(
            grid,
            self.build_time()?,
            self.build_controls()?,
            self.build_dynamics()?,
            self.build_cost()?,
            initial,
        )?;
        Ok(match self.envelope {
            EnvelopeConfig::GridEnds => problem,
            EnvelopeConfig::Moment { constant, power } => problem.with_envelope(constant, move |s| s.powf(power))?,
        })
    }

    pub fn build_common_noise(&self) -> Result<CommonNoiseProblem, CliError> {
        let cn = self
            .common_noise
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [common_noise] section".into()))?;
        let grid = self.build_grid()?;
        let initial = self.build_initial(&grid)?;
        Ok(CommonNoiseProblem::new(
            grid,
            self.build_time()?,
            self.build_controls()?,
            self.build_dynamics()?,
            self.build_cost()?,
            initial,
            cn.sigma0,
            cn.depth,
        )?)
    }

    /// Linear-quadratic parameters, when the model is of that form.
    pub fn lq_params(&self) -> Option<LqParams> {
        match (&self.dynamics, &self.cost) {
            (
                DynamicsConfig::Affine { c, p, q, sigma },
                CostConfig::Lq {
                    n, m, m_hat, h, h_hat, ..
                },
            ) => Some(LqParams {
                c: (*c).into(),
                p: (*p).into(),
                q: (*q).into(),
                cost: QuadraticCost {
                    n: (*n).into(),
                    m: (*m).into(),
                    m_hat: (*m_hat).into(),
                    h: (*h).into(),
                    h_hat: (*h_hat).into(),
                },
                sigma: *sigma,
            }),
            _ => None,
        }
    }
}
