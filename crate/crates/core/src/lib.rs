//! Steady-state flow fixed points `φ = A(θ)φ + b(θ)` for product-form
//! queueing networks, their implicit gradients and projected descent.

pub mod error;
pub mod gradients;
pub mod models;
pub mod objective;
pub mod optimize;
mod par;
pub mod problem;
pub mod sim;
pub mod solvers;
pub mod sparse;
pub mod system;
pub mod types;

pub use error::{Error, Result};
pub use gradients::{compute_gradient, GradientConfig, GradientEngine, GradientReport};
pub use objective::{MeanQueueLength, Objective};
pub use optimize::{optimize, OptimizeConfig, OptimizeTrace, StepRule, Termination};
pub use problem::Problem;
pub use solvers::{solve_adjoint, solve_flows, SolveReport, SolverConfig, SolverMethod};
pub use system::{spectral_safety_check, AffineFlowSystem, CheckResult, FlowSystemBuilder, SafetyConfig};
pub use types::{FeasibleSet, FlowVector, ParamVector};
pub use models::{generate_dag, DagGenSpec, EpnModel, JacksonModel, ModelFile};
pub use sim::{simulate_jackson, SimConfig, SimResult};
