//! Problem ingredients: control sets, drift variants, cost triples `(f, l, g)`
//! and a sampled falsifier for the decreasing-differences condition.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, StateGrid, TimeGrid};

/// Coefficient affine in time, `base + slope * t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeCoef {
    pub base: f64,
    pub slope: f64,
}

impl TimeCoef {
    pub const fn constant(value: f64) -> Self {
        Self {
            base: value,
            slope: 0.0,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.base + self.slope * t
    }

    pub fn is_constant(&self) -> bool {
        self.slope == 0.0
    }

    /// Smallest value on `[0, horizon]`.
    pub fn inf_on(&self, horizon: f64) -> f64 {
        self.at(0.0).min(self.at(horizon))
    }
}

impl From<f64> for TimeCoef {
    fn from(value: f64) -> Self {
        Self::constant(value)
    }
}

/// Finite, strictly increasing set of admissible control values.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    values: Vec<f64>,
}

impl ControlSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidModel("control set is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite control value".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidModel("control values must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    /// `count` equally spaced values on `[min, max]`; a single value sits at `min`.
    pub fn linspace(min: f64, max: f64, count: usize) -> Result<Self> {
        match count {
            0 => Err(Error::InvalidModel("control set is empty".into())),
            1 => Self::new(vec![min]),
            _ => {
                let step = (max - min) / (count - 1) as f64;
                Self::new(
                    (0..count)
                        .map(|u| if u == count - 1 { max } else { min + u as f64 * step })
                        .collect(),
                )
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, u: usize) -> f64 {
        self.values[u]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

pub type MeasureMap = Arc<dyn Fn(&DiscreteMeasure) -> f64 + Send + Sync>;

/// Mean-field term `m(μ)` entering the drift. Always bounded and
/// nondecreasing in `≤st`.
#[derive(Clone)]
pub enum MeanShift {
    /// `clamp(scale * ⟨id, μ⟩, -bound, bound)` with `scale ≥ 0`.
    ClampedMean { scale: f64, bound: f64 },
    General { map: MeasureMap, bound: f64 },
}

impl MeanShift {
    pub fn clamped_mean(scale: f64, bound: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidModel(
                "mean-field shift scale must be nonnegative to stay monotone".into(),
            ));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidModel("mean-field shift bound must be finite".into()));
        }
        Ok(Self::ClampedMean { scale, bound })
    }

    pub fn bound(&self) -> f64 {
        match self {
            Self::ClampedMean { bound, .. } | Self::General { bound, .. } => *bound,
        }
    }

    pub fn eval(&self, mu: &DiscreteMeasure) -> f64 {
        match self {
            Self::ClampedMean { .. } => self.eval_mean(mu.mean()).unwrap_or(0.0),
            Self::General { map, bound } => map(mu).clamp(-bound, *bound),
        }
    }

    /// Evaluation through the mean alone, when the shift only depends on it.
    pub fn eval_mean(&self, mean: f64) -> Option<f64> {
        match self {
            Self::ClampedMean { scale, bound } => Some((scale * mean).clamp(-bound, *bound)),
            Self::General { .. } => None,
        }
    }
}

impl fmt::Debug for MeanShift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ClampedMean { scale, bound } => f
                .debug_struct("ClampedMean")
                .field("scale", scale)
                .field("bound", bound)
                .finish(),
            Self::General { bound, .. } => f.debug_struct("General").field("bound", bound).finish(),
        }
    }
}

pub type RateFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Drift {
    /// `c(t) + p(t) x + q(t) a`.
    Affine { c: TimeCoef, p: TimeCoef, q: TimeCoef },
    /// `b(t, x, a) x` with `|b| ≤ bound`; volatility `σ x`.
    Geometric { rate: RateFn, bound: f64 },
    /// `x (a + m(μ))`; volatility `σ x`.
    GeometricMeanField { shift: MeanShift },
    /// `κ x + a + m(μ)`.
    OuMeanField { kappa: f64, shift: MeanShift },
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { c, p, q } => f
                .debug_struct("Affine")
                .field("c", c)
                .field("p", p)
                .field("q", q)
                .finish(),
            Self::Geometric { bound, .. } => f.debug_struct("Geometric").field("bound", bound).finish(),
            Self::GeometricMeanField { shift } => f
                .debug_struct("GeometricMeanField")
                .field("shift", shift)
                .finish(),
            Self::OuMeanField { kappa, shift } => f
                .debug_struct("OuMeanField")
                .field("kappa", kappa)
                .field("shift", shift)
                .finish(),
        }
    }
}

/// Controlled state dynamics with constant volatility `σ`.
#[derive(Debug, Clone)]
pub struct Dynamics {
    drift: Drift,
    sigma: f64,
}

impl Dynamics {
    pub fn new(drift: Drift, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidModel(format!("volatility must be >= 0, got {sigma}")));
        }
        if let Drift::Geometric { bound, .. } = &drift {
            if !(bound.is_finite() && *bound >= 0.0) {
                return Err(Error::InvalidModel("geometric drift needs a finite bound".into()));
            }
        }
        Ok(Self { drift, sigma })
    }

    pub fn affine(c: impl Into<TimeCoef>, p: impl Into<TimeCoef>, q: impl Into<TimeCoef>, sigma: f64) -> Result<Self> {
        Self::new(
            Drift::Affine {
                c: c.into(),
                p: p.into(),
                q: q.into(),
            },
            sigma,
        )
    }

    /// Geometric dynamics with growth rate `base + control_coef * a`.
    pub fn geometric_linear(base: f64, control_coef: f64, bound: f64, sigma: f64) -> Result<Self> {
        let rate: RateFn = Arc::new(move |_, _, a| base + control_coef * a);
        Self::new(Drift::Geometric { rate, bound }, sigma)
    }

    pub fn geometric_mean_field(shift: MeanShift, sigma: f64) -> Result<Self> {
        Self::new(Drift::GeometricMeanField { shift }, sigma)
    }

    pub fn ou_mean_field(kappa: f64, shift: MeanShift, sigma: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::InvalidModel("kappa must be finite".into()));
        }
        Self::new(Drift::OuMeanField { kappa, shift }, sigma)
    }

    pub fn drift_kind(&self) -> &Drift {
        &self.drift
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_mean_field(&self) -> bool {
        self.mean_shift().is_some()
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self.drift, Drift::Geometric { .. } | Drift::GeometricMeanField { .. })
    }

    pub fn mean_shift(&self) -> Option<&MeanShift> {
        match &self.drift {
            Drift::GeometricMeanField { shift } | Drift::OuMeanField { shift, .. } => Some(shift),
            _ => None,
        }
    }

    /// Value of `m(μ)` for mean-field variants, zero otherwise.
    pub fn shift_for(&self, mu: &DiscreteMeasure) -> f64 {
        self.mean_shift().map_or(0.0, |s| s.eval(mu))
    }

    /// State drift at `(t, x, a)` given the current mean-field shift value.
    pub fn drift(&self, t: f64, x: f64, a: f64, shift: f64) -> f64 {
        match &self.drift {
            Drift::Affine { c, p, q } => c.at(t) + p.at(t) * x + q.at(t) * a,
            Drift::Geometric { rate, bound } => rate(t, x, a).clamp(-bound, *bound) * x,
            Drift::GeometricMeanField { .. } => x * (a + shift),
            Drift::OuMeanField { kappa, .. } => kappa * x + a + shift,
        }
    }

    /// Local volatility at `x`: `σ`, or `σ x` for geometric variants.
    pub fn local_vol(&self, x: f64) -> f64 {
        if self.is_geometric() {
            self.sigma * x.abs()
        } else {
            self.sigma
        }
    }
}

pub type StatFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type MeasureCostFn = Arc<dyn Fn(f64, f64, &DiscreteMeasure) -> f64 + Send + Sync>;
pub type ControlCostFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// How a cost term depends on `(t, x, μ)`. The measure enters only through a
/// declared statistic so every evaluation is an exact grid sum.
#[derive(Clone)]
pub enum Interaction {
    Zero,
    /// `φ(t, x, ⟨id, μ⟩)`.
    Mean(StatFn),
    /// `∫ γ(t, x, y) dμ(y)`.
    OrderOne(StatFn),
    /// Arbitrary access to the distribution function.
    General(MeasureCostFn),
    Sum(Vec<Interaction>),
}

impl Interaction {
    pub fn mean(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Mean(Arc::new(f))
    }

    pub fn order_one(kernel: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::OrderOne(Arc::new(kernel))
    }

    pub fn general(f: impl Fn(f64, f64, &DiscreteMeasure) -> f64 + Send + Sync + 'static) -> Self {
        Self::General(Arc::new(f))
    }

    /// Term depending on `(t, x)` only.
    pub fn separable(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Mean(Arc::new(move |t, x, _| f(t, x)))
    }

    pub fn plus(self, other: Interaction) -> Self {
        match (self, other) {
            (Self::Zero, o) | (o, Self::Zero) => o,
            (Self::Sum(mut a), Self::Sum(b)) => {
                a.extend(b);
                Self::Sum(a)
            }
            (Self::Sum(mut a), o) => {
                a.push(o);
                Self::Sum(a)
            }
            (s, o) => Self::Sum(vec![s, o]),
        }
    }

    pub fn eval(&self, t: f64, x: f64, mu: &DiscreteMeasure) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Mean(f) => f(t, x, mu.mean()),
            Self::OrderOne(kernel) => mu.integrate(|y| kernel(t, x, y)),
            Self::General(f) => f(t, x, mu),
            Self::Sum(terms) => terms.iter().map(|term| term.eval(t, x, mu)).sum(),
        }
    }

    /// Evaluation from a scalar mean; `None` when the term needs more of the
    /// measure than its mean.
    pub fn eval_mean(&self, t: f64, x: f64, mean: f64) -> Option<f64> {
        match self {
            Self::Zero => Some(0.0),
            Self::Mean(f) => Some(f(t, x, mean)),
            Self::OrderOne(_) | Self::General(_) => None,
            Self::Sum(terms) => terms.iter().map(|term| term.eval_mean(t, x, mean)).sum(),
        }
    }

    pub fn depends_on_mean_only(&self) -> bool {
        match self {
            Self::Zero | Self::Mean(_) => true,
            Self::OrderOne(_) | Self::General(_) => false,
            Self::Sum(terms) => terms.iter().all(Self::depends_on_mean_only),
        }
    }

    /// Values at every grid node.
    pub fn on_grid(&self, t: f64, grid: &StateGrid, mu: &DiscreteMeasure) -> Vec<f64> {
        grid.points().iter().map(|&x| self.eval(t, x, mu)).collect()
    }
}

impl fmt::Debug for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::Mean(_) => f.write_str("Mean(..)"),
            Self::OrderOne(_) => f.write_str("OrderOne(..)"),
            Self::General(_) => f.write_str("General(..)"),
            Self::Sum(terms) => f.debug_tuple("Sum").field(terms).finish(),
        }
    }
}

/// Running cost `f(t, x, μ)`, control cost `l(t, x, a)` and terminal cost
/// `g(x, μ)`.
#[derive(Clone)]
pub struct CostModel {
    running: Interaction,
    control: ControlCostFn,
    terminal: Interaction,
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("running", &self.running)
            .field("terminal", &self.terminal)
            .finish_non_exhaustive()
    }
}

impl CostModel {
    pub fn new(
        running: Interaction,
        control: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        terminal: Interaction,
    ) -> Self {
        Self {
            running,
            control: Arc::new(control),
            terminal,
        }
    }

    pub fn running_term(&self) -> &Interaction {
        &self.running
    }

    pub fn terminal_term(&self) -> &Interaction {
        &self.terminal
    }

    pub fn running(&self, t: f64, x: f64, mu: &DiscreteMeasure) -> f64 {
        self.running.eval(t, x, mu)
    }

    pub fn control_cost(&self, t: f64, x: f64, a: f64) -> f64 {
        (self.control)(t, x, a)
    }

    /// `g(x, μ)`; terminal terms are evaluated at `t = horizon`.
    pub fn terminal(&self, horizon: f64, x: f64, mu: &DiscreteMeasure) -> f64 {
        self.terminal.eval(horizon, x, mu)
    }

    pub fn depends_on_mean_only(&self) -> bool {
        self.running.depends_on_mean_only() && self.terminal.depends_on_mean_only()
    }

    /// Adds a term to the running cost.
    pub fn with_running(mut self, extra: Interaction) -> Self {
        self.running = self.running.plus(extra);
        self
    }

    /// Adds a term to the terminal cost.
    pub fn with_terminal(mut self, extra: Interaction) -> Self {
        self.terminal = self.terminal.plus(extra);
        self
    }

    /// Worst convexity defect of `a ↦ l(t, x, a)` over the control set at the
    /// sampled `(t, x)`: the largest decrease between consecutive slopes.
    pub fn control_convexity_defect(&self, controls: &ControlSet, grid: &StateGrid, times: &[f64]) -> f64 {
        let a = controls.values();
        if a.len() < 3 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for &t in times {
            for &x in grid.points() {
                let slopes: Vec<f64> = a
                    .windows(2)
                    .map(|w| (self.control_cost(t, x, w[1]) - self.control_cost(t, x, w[0])) / (w[1] - w[0]))
                    .collect();
                for s in slopes.windows(2) {
                    worst = worst.max(s[0] - s[1]);
                }
            }
        }
        worst
    }
}

/// Quadratic cost coefficients: `f + l = ½ n a² + ½ (m x + m̂ ⟨id,μ⟩)²`,
/// `g = ½ (h x + ĥ ⟨id,μ⟩)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    pub n: TimeCoef,
    pub m: TimeCoef,
    pub m_hat: TimeCoef,
    pub h: TimeCoef,
    pub h_hat: TimeCoef,
}

impl QuadraticCost {
    /// Decreasing differences in `(x, mean)` need `m m̂ ≤ 0` on `[0, T]` and
    /// `h ĥ ≤ 0` at `T`; strict convexity needs `inf n > 0`.
    pub fn check(&self, horizon: f64) -> Result<()> {
        if self.n.inf_on(horizon) <= 0.0 {
            return Err(Error::InvalidModel("need inf n > 0".into()));
        }
        let samples = 64;
        for s in 0..=samples {
            let t = horizon * s as f64 / samples as f64;
            if self.m.at(t) * self.m_hat.at(t) > 0.0 {
                return Err(Error::InvalidModel(format!(
                    "sign condition m * m_hat <= 0 fails at t = {t}"
                )));
            }
        }
        if self.h.at(horizon) * self.h_hat.at(horizon) > 0.0 {
            return Err(Error::InvalidModel("sign condition h * h_hat <= 0 fails".into()));
        }
        Ok(())
    }

    /// Cost model without the sign checks (negative controls).
    pub fn cost_model(&self) -> CostModel {
        let QuadraticCost { n, m, m_hat, h, h_hat } = *self;
        CostModel::new(
            Interaction::mean(move |t, x, z| 0.5 * (m.at(t) * x + m_hat.at(t) * z).powi(2)),
            move |t, _, a| 0.5 * n.at(t) * a * a,
            Interaction::mean(move |t, x, z| 0.5 * (h.at(t) * x + h_hat.at(t) * z).powi(2)),
        )
    }
}

/// Full linear-quadratic model: affine drift `c + p x + q a`,
/// constant volatility and quadratic costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub c: TimeCoef,
    pub p: TimeCoef,
    pub q: TimeCoef,
    pub cost: QuadraticCost,
    pub sigma: f64,
}

impl LqParams {
    pub fn check(&self, horizon: f64) -> Result<()> {
        if self.q.inf_on(horizon) <= 0.0 {
            return Err(Error::InvalidModel("need inf q > 0".into()));
        }
        self.cost.check(horizon)
    }
}

/// Linear-quadratic model, rejected when the sign conditions fail.
pub fn lq_model(params: &LqParams, horizon: f64) -> Result<(Dynamics, CostModel)> {
    params.check(horizon)?;
    lq_model_unchecked(params)
}

/// Linear-quadratic model without the submodularity sign checks.
pub fn lq_model_unchecked(params: &LqParams) -> Result<(Dynamics, CostModel)> {
    let dynamics = Dynamics::affine(params.c, params.p, params.q, params.sigma)?;
    Ok((dynamics, params.cost.cost_model()))
}

/// `f ≡ 0`, `l = a²/2`, `g(x, μ) = (x - 1{⟨id,μ⟩ ≥ 0})²`.
pub fn threshold_model() -> CostModel {
    threshold_model_with_penalty(0.0)
}

/// Threshold model with an extra `penalty * 1{⟨id,μ⟩ ≥ 0}` in `g`. The extra
/// term does not depend on `x`, so decisions and equilibria are unchanged;
/// with `penalty ≥ 2 max|x| - 1` the terminal cost is nondecreasing in `μ`.
pub fn threshold_model_with_penalty(penalty: f64) -> CostModel {
    CostModel::new(
        Interaction::Zero,
        |_, _, a| 0.5 * a * a,
        Interaction::mean(move |_, x, z| {
            let ind = if z >= 0.0 { 1.0 } else { 0.0 };
            (x - ind).powi(2) + penalty * ind
        }),
    )
}

/// Weights of an order-one interaction model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderOneWeights {
    pub running: f64,
    pub terminal: f64,
    /// `l = control / 2 * a²`.
    pub control: f64,
}

impl Default for OrderOneWeights {
    fn default() -> Self {
        Self {
            running: 1.0,
            terminal: 1.0,
            control: 1.0,
        }
    }
}

/// `f = w_f ∫ γ(x, y) dμ(y)`, `g = w_g ∫ γ(x, y) dμ(y)`, `l = w_l a² / 2`.
pub fn order1_model(
    gamma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    weights: OrderOneWeights,
) -> CostModel {
    let gamma = Arc::new(gamma);
    let g_run = gamma.clone();
    let (wf, wg, wl) = (weights.running, weights.terminal, weights.control);
    let running = if wf == 0.0 {
        Interaction::Zero
    } else {
        Interaction::order_one(move |_, x, y| wf * g_run(x, y))
    };
    let terminal = if wg == 0.0 {
        Interaction::Zero
    } else {
        Interaction::order_one(move |_, x, y| wg * gamma(x, y))
    };
    CostModel::new(running, move |_, _, a| 0.5 * wl * a * a, terminal)
}

/// Which cost component a submodularity witness refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostComponent {
    Running { t: f64 },
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmodularityWitness {
    pub component: CostComponent,
    pub x: f64,
    pub x_bar: f64,
    /// Index into the supplied measure pairs.
    pub pair: usize,
    pub mean: f64,
    pub mean_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmodularityReport {
    pub samples: usize,
    pub max_violation: f64,
    pub witness: Option<SubmodularityWitness>,
    pub tolerance: f64,
}

impl SubmodularityReport {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

/// Evaluates `φ(x̄, μ̄) - φ(x, μ̄) - (φ(x̄, μ) - φ(x, μ))` for `φ ∈ {f(t,·,·), g}`
/// over every grid pair `x < x̄`, every sampled `t` and every supplied pair
/// `μ ≤st μ̄`, and reports the largest positive value.
pub fn check_submodularity(
    cost: &CostModel,
    grid: &StateGrid,
    times: &[f64],
    horizon: f64,
    pairs: &[(DiscreteMeasure, DiscreteMeasure)],
    tol: f64,
) -> Result<SubmodularityReport> {
    for (index, (lo, hi)) in pairs.iter().enumerate() {
        if !lo.st_le(hi)? {
            return Err(Error::NotComparable { index });
        }
    }
    let mut components: Vec<CostComponent> = times.iter().map(|&t| CostComponent::Running { t }).collect();
    components.push(CostComponent::Terminal);

    let xs = grid.points();
    let mut report = SubmodularityReport {
        samples: 0,
        max_violation: 0.0,
        witness: None,
        tolerance: tol,
    };
    for component in components {
        let eval = |x: f64, mu: &DiscreteMeasure| match component {
            CostComponent::Running { t } => cost.running(t, x, mu),
            CostComponent::Terminal => cost.terminal(horizon, x, mu),
        };
        for (index, (lo, hi)) in pairs.iter().enumerate() {
            let phi_lo: Vec<f64> = xs.iter().map(|&x| eval(x, lo)).collect();
            let phi_hi: Vec<f64> = xs.iter().map(|&x| eval(x, hi)).collect();
            for i in 0..xs.len() {
                for j in i + 1..xs.len() {
                    report.samples += 1;
                    let excess = (phi_hi[j] - phi_hi[i]) - (phi_lo[j] - phi_lo[i]);
                    if excess > report.max_violation {
                        report.max_violation = excess;
                        report.witness = Some(SubmodularityWitness {
                            component,
                            x: xs[i],
                            x_bar: xs[j],
                            pair: index,
                            mean: lo.mean(),
                            mean_bar: hi.mean(),
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Largest violation of `μ ≤st ν ⇒ m(μ) ≤ m(ν)` over the supplied pairs.
pub fn shift_monotonicity_defect(shift: &MeanShift, pairs: &[(DiscreteMeasure, DiscreteMeasure)]) -> f64 {
    pairs
        .iter()
        .map(|(lo, hi)| shift.eval(lo) - shift.eval(hi))
        .fold(0.0, f64::max)
}

/// Up to `count` time nodes spread evenly over the grid, always including 0
/// and `T`.
pub fn sample_times(time: &TimeGrid, count: usize) -> Vec<f64> {
    let n = time.steps();
    let count = count.clamp(2, n + 1);
    let mut ks: Vec<usize> = (0..count).map(|s| s * n / (count - 1)).collect();
    ks.dedup();
    ks.into_iter().map(|k| time.time(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(points: &[f64]) -> Arc<StateGrid> {
        Arc::new(StateGrid::from_points(points.to_vec()).unwrap())
    }

    fn dirac_pair(g: &Arc<StateGrid>, lo: usize, hi: usize) -> (DiscreteMeasure, DiscreteMeasure) {
        (
            DiscreteMeasure::dirac(g.clone(), lo).unwrap(),
            DiscreteMeasure::dirac(g.clone(), hi).unwrap(),
        )
    }

    #[test]
    fn control_set_validation() {
        assert!(ControlSet::new(vec![]).is_err());
        assert!(ControlSet::new(vec![1.0, 1.0]).is_err());
        let u = ControlSet::linspace(-1.0, 1.0, 5).unwrap();
        assert_eq!(u.values(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(ControlSet::linspace(0.3, 1.0, 1).unwrap().values(), &[0.3]);
    }

    #[test]
    fn separable_cost_has_no_violation() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let cost = CostModel::new(
            Interaction::mean(|_, x, z| x.sin() + z.powi(3)),
            |_, _, a| a * a,
            Interaction::mean(|_, x, z| x * x + 2.0 * z),
        );
        let pairs = vec![dirac_pair(&g, 0, 2), dirac_pair(&g, 1, 2)];
        let r = check_submodularity(&cost, &g, &[0.0, 0.5], 1.0, &pairs, 1e-10).unwrap();
        assert!(r.passed());
        assert!(r.max_violation <= 1e-12);
        assert_eq!(r.samples, 3 * 2 * 3);
    }

    #[test]
    fn scalar_type_interactions() {
        let g = grid(&[0.0, 1.0]);
        let pairs = vec![dirac_pair(&g, 0, 1)];
        let good = CostModel::new(Interaction::Zero, |_, _, _| 0.0, Interaction::mean(|_, x, z| -x * z));
        assert!(check_submodularity(&good, &g, &[], 1.0, &pairs, 1e-10).unwrap().passed());

        let bad = CostModel::new(Interaction::Zero, |_, _, _| 0.0, Interaction::mean(|_, x, z| x * z));
        let r = check_submodularity(&bad, &g, &[], 1.0, &pairs, 1e-10).unwrap();
        assert!(!r.passed());
        assert_eq!(r.max_violation, 1.0);
        let w = r.witness.unwrap();
        assert_eq!((w.x, w.x_bar), (0.0, 1.0));
        assert_eq!(w.component, CostComponent::Terminal);
    }

    #[test]
    fn non_comparable_pair_is_rejected() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let mu = DiscreteMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.5]).unwrap();
        let nu = DiscreteMeasure::dirac(g.clone(), 1).unwrap();
        let r = check_submodularity(&threshold_model(), &g, &[], 1.0, &[(mu, nu)], 1e-10);
        assert!(matches!(r, Err(Error::NotComparable { index: 0 })));
    }

    #[test]
    fn lq_sign_conditions() {
        let base = LqParams {
            c: 0.0.into(),
            p: 0.0.into(),
            q: 1.0.into(),
            cost: QuadraticCost {
                n: 1.0.into(),
                m: 1.0.into(),
                m_hat: (-1.0).into(),
                h: 1.0.into(),
                h_hat: (-0.5).into(),
            },
            sigma: 0.2,
        };
        let g = Arc::new(StateGrid::uniform(-2.0, 2.0, 9).unwrap());
        let pairs: Vec<_> = (0..8).map(|i| dirac_pair(&g, i, i + 1)).collect();

        let (_, cost) = lq_model(&base, 1.0).unwrap();
        assert!(check_submodularity(&cost, &g, &[0.0, 1.0], 1.0, &pairs, 1e-10).unwrap().passed());

        let mut flipped = base;
        flipped.cost.m_hat = 1.0.into();
        assert!(lq_model(&flipped, 1.0).is_err());
        let (_, cost) = lq_model_unchecked(&flipped).unwrap();
        let r = check_submodularity(&cost, &g, &[0.0, 1.0], 1.0, &pairs, 1e-10).unwrap();
        assert!(!r.passed());

        let mut decoupled = base;
        decoupled.cost.m_hat = 0.0.into();
        decoupled.cost.h_hat = 0.0.into();
        let (_, cost) = lq_model(&decoupled, 1.0).unwrap();
        let r = check_submodularity(&cost, &g, &[0.0, 1.0], 1.0, &pairs, 1e-10).unwrap();
        assert_eq!(r.max_violation, 0.0);

        let mut bad_q = base;
        bad_q.q = TimeCoef { base: 1.0, slope: -2.0 };
        assert!(lq_model(&bad_q, 1.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let g = grid(&[-1.0, 0.0, 1.0]);
        let cost = threshold_model();
        let below = DiscreteMeasure::dirac(g.clone(), 0).unwrap();
        let above = DiscreteMeasure::dirac(g.clone(), 2).unwrap();
        assert_eq!(cost.terminal(1.0, 0.0, &below), 0.0);
        assert_eq!(cost.terminal(1.0, 0.0, &above), 1.0);
        let pairs = vec![(below, above)];
        assert!(check_submodularity(&cost, &g, &[0.0], 1.0, &pairs, 1e-10).unwrap().passed());
    }

    #[test]
    fn order_one_examples() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let mu = DiscreteMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.5]).unwrap();
        let cost = order1_model(|x, y| -x * y, OrderOneWeights::default());
        assert!((cost.terminal(1.0, 1.0, &mu) + 1.0).abs() < 1e-15);

        let pairs = vec![dirac_pair(&g, 0, 2), dirac_pair(&g, 0, 1)];
        let sep = order1_model(|x, y| x + y, OrderOneWeights::default());
        assert!(check_submodularity(&sep, &g, &[0.0], 1.0, &pairs, 1e-10).unwrap().max_violation <= 1e-12);
        let bad = order1_model(|x, y| x * y, OrderOneWeights::default());
        assert!(!check_submodularity(&bad, &g, &[0.0], 1.0, &pairs, 1e-10).unwrap().passed());
    }

    #[test]
    fn drift_variants() {
        let shift = MeanShift::clamped_mean(2.0, 1.0).unwrap();
        assert_eq!(shift.eval_mean(0.25), Some(0.5));
        assert_eq!(shift.eval_mean(3.0), Some(1.0));
        assert!(MeanShift::clamped_mean(-1.0, 1.0).is_err());

        let d = Dynamics::affine(1.0, 2.0, 3.0, 0.1).unwrap();
        assert_eq!(d.drift(0.0, 1.0, 1.0, 0.0), 6.0);
        assert!(!d.is_mean_field());

        let geo = Dynamics::geometric_linear(0.1, 1.0, 0.5, 0.2).unwrap();
        assert!((geo.drift(0.0, 2.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((geo.local_vol(2.0) - 0.4).abs() < 1e-15);

        let gm = Dynamics::geometric_mean_field(shift.clone(), 0.2).unwrap();
        assert_eq!(gm.drift(0.0, 2.0, 0.5, 0.25), 1.5);
        let ou = Dynamics::ou_mean_field(-0.5, shift, 0.3).unwrap();
        assert_eq!(ou.drift(0.0, 2.0, 0.5, 0.25), -0.25);
        assert!(ou.is_mean_field());
        assert!(Dynamics::affine(0.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn quadratic_control_cost_is_convex() {
        let g = grid(&[0.0, 1.0]);
        let u = ControlSet::linspace(-1.0, 1.0, 7).unwrap();
        assert!(threshold_model().control_convexity_defect(&u, &g, &[0.0]) <= 1e-12);
        let concave = CostModel::new(Interaction::Zero, |_, _, a| -a * a, Interaction::Zero);
        assert!(concave.control_convexity_defect(&u, &g, &[0.0]) > 0.0);
    }

    #[test]
    fn sample_times_cover_endpoints() {
        let t = TimeGrid::new(2.0, 10).unwrap();
        let s = sample_times(&t, 3);
        assert_eq!(s, vec![0.0, 1.0, 2.0]);
        assert_eq!(sample_times(&TimeGrid::new(1.0, 1).unwrap(), 5).len(), 2);
    }
}
