//! Probability measures on a uniform state grid, ordered by first-order
//! stochastic dominance.
//!
//! A measure is identified with its distribution function `F(s) = μ(-∞, s]`
//! sampled at the grid nodes. `μ ≤st ν` holds when `F_μ ≥ F_ν` pointwise, the
//! meet takes the pointwise maximum of the distribution functions and the join
//! the pointwise minimum. On a fixed grid both operations are exact: the
//! pointwise max/min of two grid CDFs is again a grid CDF.
//!
//! Flows of measures (one measure per time node) inherit the order node-wise.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Tolerance used for every CDF comparison.
pub const CDF_TOL: f64 = 1e-12;

const SPACING_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    points: Vec<f64>,
    dx: f64,
}

impl StateGrid {
    /// `m` equally spaced nodes from `lower` to `upper` inclusive.
    pub fn uniform(lower: f64, upper: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes, got {m}")));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidGrid(format!(
                "bounds must be finite with lower < upper, got [{lower}, {upper}]"
            )));
        }
        let dx = (upper - lower) / (m - 1) as f64;
        let points = (0..m)
            .map(|i| if i == m - 1 { upper } else { lower + i as f64 * dx })
            .collect();
        Ok(Self { points, dx })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        let m = points.len();
        if m < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes, got {m}")));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid point".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points must be strictly increasing".into()));
        }
        let dx = (points[m - 1] - points[0]) / (m - 1) as f64;
        for (i, w) in points.windows(2).enumerate() {
            if ((w[1] - w[0]) - dx).abs() > SPACING_RTOL * dx.max(w[1].abs()) {
                return Err(Error::InvalidGrid(format!(
                    "non-uniform spacing between nodes {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(Self { points, dx })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn lower(&self) -> f64 {
        self.points[0]
    }

    pub fn upper(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Largest absolute state value on the grid.
    pub fn max_abs(&self) -> f64 {
        self.lower().abs().max(self.upper().abs())
    }

    /// Locates `x` for linear interpolation: returns `(i, theta)` with
    /// `x = (1 - theta) x_i + theta x_{i+1}`. Points outside the grid are
    /// clamped to the boundary nodes.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let m = self.len();
        if x <= self.lower() {
            return (0, 0.0);
        }
        if x >= self.upper() {
            return (m - 2, 1.0);
        }
        let s = (x - self.lower()) / self.dx;
        let i = (s.floor() as usize).min(m - 2);
        let theta = (x - self.points[i]) / self.dx;
        (i, theta.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `N`; there are `N + 1` time nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }
}

/// Probability weights on a [`StateGrid`] together with the cached
/// distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    grid: Arc<StateGrid>,
    weights: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
}

impl DiscreteMeasure {
    /// Normalizes nonnegative `weights` to total mass one.
    pub fn from_weights(grid: Arc<StateGrid>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} weights for a grid of {} nodes",
                weights.len(),
                grid.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let mut running = 0.0;
        let prefix: Vec<f64> = weights
            .iter()
            .map(|w| {
                running += w;
                running
            })
            .collect();
        let total = running;
        if total <= 0.0 {
            return Err(Error::InvalidMeasure("total mass must be positive".into()));
        }
        let cdf = prefix.iter().map(|p| (p / total).min(1.0)).collect();
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self::assemble(grid, weights, cdf))
    }

    /// Builds a measure from its distribution function at the grid nodes.
    /// The value at the last node is forced to one, so any mass above the grid
    /// is clamped to the top node.
    pub fn from_cdf(grid: Arc<StateGrid>, cdf: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        if cdf.len() != m {
            return Err(Error::InvalidMeasure(format!(
                "{} CDF values for a grid of {m} nodes",
                cdf.len()
            )));
        }
        if cdf.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite CDF value".into()));
        }
        let mut fixed = Vec::with_capacity(m);
        let mut prev = 0.0_f64;
        for (j, &c) in cdf.iter().enumerate() {
            if c < prev - CDF_TOL || !(-CDF_TOL..=1.0 + CDF_TOL).contains(&c) {
                return Err(Error::InvalidMeasure(format!(
                    "CDF not a nondecreasing [0,1] sequence at node {j}"
                )));
            }
            let v = if j == m - 1 { 1.0 } else { c.clamp(prev, 1.0) };
            fixed.push(v);
            prev = v;
        }
        let weights = std::iter::once(fixed[0])
            .chain(fixed.windows(2).map(|w| w[1] - w[0]))
            .collect();
        Ok(Self::assemble(grid, weights, fixed))
    }

    fn assemble(grid: Arc<StateGrid>, weights: Vec<f64>, cdf: Vec<f64>) -> Self {
        let mean = grid.points().iter().zip(&weights).map(|(x, w)| x * w).sum();
        Self {
            grid,
            weights,
            cdf,
            mean,
        }
    }

    pub fn dirac(grid: Arc<StateGrid>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::InvalidMeasure(format!("node {index} outside the grid")));
        }
        let mut w = vec![0.0; grid.len()];
        w[index] = 1.0;
        Self::from_weights(grid, w)
    }

    /// Unit mass at `x`, split linearly between the two neighbouring nodes so
    /// the mean is preserved; mass outside the grid goes to the boundary node.
    pub fn point_mass(grid: Arc<StateGrid>, x: f64) -> Result<Self> {
        Self::mixture_of_points(grid, &[(x, 1.0)])
    }

    /// Finite mixture `Σ p_k δ_{x_k}` projected onto the grid.
    pub fn mixture_of_points(grid: Arc<StateGrid>, atoms: &[(f64, f64)]) -> Result<Self> {
        let mut w = vec![0.0; grid.len()];
        for &(x, p) in atoms {
            if !x.is_finite() {
                return Err(Error::InvalidMeasure("non-finite atom location".into()));
            }
            let (i, theta) = grid.locate(x);
            w[i] += p * (1.0 - theta);
            w[i + 1] += p * theta;
        }
        Self::from_weights(grid, w)
    }

    /// Uniform law on `[lo, hi]`, restricted to the grid nodes in that
    /// interval (falls back to a point mass at the midpoint when no node lies
    /// inside).
    pub fn uniform_on(grid: Arc<StateGrid>, lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidMeasure(format!("empty interval [{lo}, {hi}]")));
        }
        let eps = 1e-12 * grid.dx();
        let w: Vec<f64> = grid
            .points()
            .iter()
            .map(|&x| if x >= lo - eps && x <= hi + eps { 1.0 } else { 0.0 })
            .collect();
        if w.iter().all(|&v| v == 0.0) {
            return Self::point_mass(grid, 0.5 * (lo + hi));
        }
        Self::from_weights(grid, w)
    }

    /// Gaussian density sampled at the nodes and renormalized.
    pub fn truncated_gaussian(grid: Arc<StateGrid>, mean: f64, std_dev: f64) -> Result<Self> {
        if std_dev.is_nan() || std_dev <= 0.0 {
            return Err(Error::InvalidMeasure("standard deviation must be positive".into()));
        }
        let w: Vec<f64> = grid
            .points()
            .iter()
            .map(|&x| (-0.5 * ((x - mean) / std_dev).powi(2)).exp())
            .collect();
        if w.iter().all(|&v| v == 0.0) {
            return Self::point_mass(grid, mean);
        }
        Self::from_weights(grid, w)
    }

    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `⟨id, μ⟩`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `⟨φ, μ⟩` by an exact grid sum.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .points()
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| phi(x) * w)
            .sum()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Largest amount by which `self ≤st other` fails: `max_j (F_other - F_self)`.
    /// Nonpositive (up to rounding) when the order holds.
    pub fn order_excess(&self, other: &Self) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self
            .cdf
            .iter()
            .zip(&other.cdf)
            .map(|(a, b)| b - a)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `self ≤st other`.
    pub fn st_le(&self, other: &Self) -> Result<bool> {
        Ok(self.order_excess(other)? <= CDF_TOL)
    }

    pub fn meet(&self, other: &Self) -> Result<Self> {
        self.check_grid(other)?;
        let cdf = self.cdf.iter().zip(&other.cdf).map(|(a, b)| a.max(*b)).collect();
        Self::from_cdf(self.grid.clone(), cdf)
    }

    pub fn join(&self, other: &Self) -> Result<Self> {
        self.check_grid(other)?;
        let cdf = self.cdf.iter().zip(&other.cdf).map(|(a, b)| a.min(*b)).collect();
        Self::from_cdf(self.grid.clone(), cdf)
    }

    /// Sup-distance between the distribution functions.
    pub fn kolmogorov_distance(&self, other: &Self) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self
            .cdf
            .iter()
            .zip(&other.cdf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Whether `nu` first-order dominates `mu`, i.e. `mu ≤st nu`.
pub fn dominates(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<bool> {
    mu.st_le(nu)
}

pub fn meet(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    mu.meet(nu)
}

pub fn join(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    mu.join(nu)
}

pub fn kolmogorov_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    mu.kolmogorov_distance(nu)
}

/// Least upper bound of a finite family: pointwise minimum of the CDFs.
pub fn family_sup(measures: &[DiscreteMeasure]) -> Result<DiscreteMeasure> {
    let (first, rest) = measures.split_first().ok_or(Error::EmptyFamily)?;
    rest.iter().try_fold(first.clone(), |acc, m| acc.join(m))
}

/// Greatest lower bound of a finite family: pointwise maximum of the CDFs.
pub fn family_inf(measures: &[DiscreteMeasure]) -> Result<DiscreteMeasure> {
    let (first, rest) = measures.split_first().ok_or(Error::EmptyFamily)?;
    rest.iter().try_fold(first.clone(), |acc, m| acc.meet(m))
}

/// Extremal measures dominating / dominated by every law whose
/// `ψ(|x|)`-moment is at most `constant`.
///
/// `psi` is evaluated on `[0, ∞)` and extended by `ψ(0)` to negative
/// arguments. Returns `(μ_min, μ_max)` with CDFs `min(C/ψ(-s), 1)` and
/// `max(1 - C/ψ(s), 0)` at the grid nodes; mass beyond the top node is
/// clamped onto it.
pub fn envelope_bounds(
    constant: f64,
    psi: impl Fn(f64) -> f64,
    grid: &Arc<StateGrid>,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let psi_zero = psi(0.0);
    if !(constant.is_finite() && constant > 0.0) || constant < psi_zero {
        return Err(Error::EnvelopeConstant {
            constant,
            psi_zero,
        });
    }
    let psi_ext = |s: f64| if s < 0.0 { psi_zero } else { psi(s) };
    let lower_cdf = grid
        .points()
        .iter()
        .map(|&s| (constant / psi_ext(-s)).min(1.0))
        .collect();
    let upper_cdf = grid
        .points()
        .iter()
        .map(|&s| (1.0 - constant / psi_ext(s)).max(0.0))
        .collect();
    Ok((
        DiscreteMeasure::from_cdf(grid.clone(), lower_cdf)?,
        DiscreteMeasure::from_cdf(grid.clone(), upper_cdf)?,
    ))
}

/// Time-indexed sequence of measures on one grid, an element of the lattice
/// of feasible flows.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    measures: Vec<DiscreteMeasure>,
}

impl MeasureFlow {
    pub fn new(measures: Vec<DiscreteMeasure>) -> Result<Self> {
        let first = measures
            .first()
            .ok_or_else(|| Error::InvalidMeasure("empty flow".into()))?;
        if measures.iter().any(|m| !m.same_grid(first)) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { measures })
    }

    /// `initial` at time 0 followed by `rest` at every later node.
    pub fn anchored(initial: &DiscreteMeasure, rest: &DiscreteMeasure, steps: usize) -> Result<Self> {
        let mut measures = Vec::with_capacity(steps + 1);
        measures.push(initial.clone());
        measures.extend(std::iter::repeat_n(rest.clone(), steps));
        Self::new(measures)
    }

    pub fn constant(measure: &DiscreteMeasure, steps: usize) -> Self {
        Self {
            measures: vec![measure.clone(); steps + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    /// Number of time steps `N` (one less than the number of measures).
    pub fn steps(&self) -> usize {
        self.measures.len() - 1
    }

    pub fn get(&self, k: usize) -> &DiscreteMeasure {
        &self.measures[k]
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn terminal(&self) -> &DiscreteMeasure {
        &self.measures[self.measures.len() - 1]
    }

    pub fn grid(&self) -> &Arc<StateGrid> {
        self.measures[0].grid()
    }

    pub fn means(&self) -> Vec<f64> {
        self.measures.iter().map(DiscreteMeasure::mean).collect()
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() || !self.measures[0].same_grid(&other.measures[0]) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Worst violation of `self ≤L other` as `(time index, excess)`.
    pub fn order_excess(&self, other: &Self) -> Result<(usize, f64)> {
        self.check_shape(other)?;
        let mut worst = (0, f64::NEG_INFINITY);
        for (k, (a, b)) in self.measures.iter().zip(&other.measures).enumerate() {
            let e = a.order_excess(b)?;
            if e > worst.1 {
                worst = (k, e);
            }
        }
        Ok(worst)
    }

    /// `self ≤L other`: order at every time node, including 0 and T.
    pub fn leq(&self, other: &Self) -> Result<bool> {
        Ok(self.order_excess(other)?.1 <= CDF_TOL)
    }

    pub fn meet(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let measures = self
            .measures
            .iter()
            .zip(&other.measures)
            .map(|(a, b)| a.meet(b))
            .collect::<Result<_>>()?;
        Ok(Self { measures })
    }

    pub fn join(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let measures = self
            .measures
            .iter()
            .zip(&other.measures)
            .map(|(a, b)| a.join(b))
            .collect::<Result<_>>()?;
        Ok(Self { measures })
    }

    /// Sup over time of the Kolmogorov distance.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_shape(other)?;
        self.measures
            .iter()
            .zip(&other.measures)
            .try_fold(0.0_f64, |acc, (a, b)| Ok(acc.max(a.kolmogorov_distance(b)?)))
    }
}

pub fn flow_leq(mu: &MeasureFlow, nu: &MeasureFlow) -> Result<bool> {
    mu.leq(nu)
}

pub fn flow_meet(mu: &MeasureFlow, nu: &MeasureFlow) -> Result<MeasureFlow> {
    mu.meet(nu)
}

pub fn flow_join(mu: &MeasureFlow, nu: &MeasureFlow) -> Result<MeasureFlow> {
    mu.join(nu)
}
