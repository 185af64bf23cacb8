//! A fully discretised mean field game: grids, controls, dynamics, costs,
//! initial law and the extremal measures used as starting points.

use std::borrow::Cow;
use std::sync::Arc;

use crate::chain::{build_chain, check_cfl, MarkovChainModel};
use crate::error::{Error, Result};
use crate::measures::{envelope_bounds, DiscreteMeasure, MeasureFlow, StateGrid, TimeGrid};
use crate::model::{ControlSet, CostModel, Dynamics};

#[derive(Debug, Clone)]
pub struct MfgProblem {
    grid: Arc<StateGrid>,
    time: TimeGrid,
    controls: ControlSet,
    dynamics: Dynamics,
    cost: CostModel,
    initial: DiscreteMeasure,
    lower: DiscreteMeasure,
    upper: DiscreteMeasure,
    chain: Option<Arc<MarkovChainModel>>,
}

impl MfgProblem {
    /// Validates the discretisation (CFL included). The extremal measures
    /// default to the Dirac masses at the two ends of the grid.
    pub fn new(
        grid: Arc<StateGrid>,
        time: TimeGrid,
        controls: ControlSet,
        dynamics: Dynamics,
        cost: CostModel,
        initial: DiscreteMeasure,
    ) -> Result<Self> {
        if initial.grid().as_ref() != grid.as_ref() {
            return Err(Error::GridMismatch);
        }
        let chain = if dynamics.is_mean_field() {
            check_cfl(&dynamics, &grid, &time, &controls)?;
            None
        } else {
            Some(Arc::new(build_chain(&dynamics, &grid, &time, &controls, None)?))
        };
        let lower = DiscreteMeasure::dirac(grid.clone(), 0)?;
        let upper = DiscreteMeasure::dirac(grid.clone(), grid.len() - 1)?;
        Ok(Self {
            grid,
            time,
            controls,
            dynamics,
            cost,
            initial,
            lower,
            upper,
            chain,
        })
    }

    /// Replaces the extremal measures.
    pub fn with_extremes(mut self, lower: DiscreteMeasure, upper: DiscreteMeasure) -> Result<Self> {
        if lower.grid().as_ref() != self.grid.as_ref() || upper.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch);
        }
        if !lower.st_le(&upper)? {
            return Err(Error::NotComparable { index: 0 });
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    /// Extremal measures of the `ψ(|x|)`-moment ball of radius `constant`.
    pub fn with_envelope(self, constant: f64, psi: impl Fn(f64) -> f64) -> Result<Self> {
        let (lower, upper) = envelope_bounds(constant, psi, &self.grid)?;
        self.with_extremes(lower, upper)
    }

    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
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

    pub fn initial(&self) -> &DiscreteMeasure {
        &self.initial
    }

    pub fn lower(&self) -> &DiscreteMeasure {
        &self.lower
    }

    pub fn upper(&self) -> &DiscreteMeasure {
        &self.upper
    }

    /// Smallest feasible flow: initial law at `t_0`, lower extreme afterwards.
    pub fn lower_flow(&self) -> Result<MeasureFlow> {
        MeasureFlow::anchored(&self.initial, &self.lower, self.time.steps())
    }

    /// Largest feasible flow: initial law at `t_0`, upper extreme afterwards.
    pub fn upper_flow(&self) -> Result<MeasureFlow> {
        MeasureFlow::anchored(&self.initial, &self.upper, self.time.steps())
    }

    /// Chain against `mu`; shared when the dynamics ignore the population.
    pub fn chain_for(&self, mu: &MeasureFlow) -> Result<Cow<'_, MarkovChainModel>> {
        match &self.chain {
            Some(chain) => Ok(Cow::Borrowed(chain.as_ref())),
            None => Ok(Cow::Owned(build_chain(
                &self.dynamics,
                &self.grid,
                &self.time,
                &self.controls,
                Some(mu),
            )?)),
        }
    }
}
