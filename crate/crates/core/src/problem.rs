use std::sync::Arc;

use crate::error::{check_dim, Result};
use crate::objective::Objective;
use crate::system::AffineFlowSystem;
use crate::types::FeasibleSet;

/// A flow system, the objective evaluated on its fixed point, and the
/// control region.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: AffineFlowSystem,
    pub objective: Arc<dyn Objective>,
    pub feasible: FeasibleSet,
}

impl Problem {
    pub fn new(
        system: AffineFlowSystem,
        objective: Arc<dyn Objective>,
        feasible: FeasibleSet,
    ) -> Result<Self> {
        check_dim("objective queues", system.dim(), objective.dim())?;
        check_dim("objective parameters", system.param_dim(), objective.param_dim())?;
        check_dim("feasible set", system.param_dim(), feasible.dim())?;
        Ok(Problem {
            system,
            objective,
            feasible,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn param_dim(&self) -> usize {
        self.system.param_dim()
    }
}
