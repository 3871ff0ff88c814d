//! Policy gradients `∇_θ J` of the steady-state objective
//! `J(θ) = F(φ*(θ), θ)`.
//!
//! The two implicit engines solve the flows once, then one adjoint system
//! `(I − ∂_φG)ᵀ y = (∂_φF)ᵀ`, and return `∂_θF + yᵀ ∂_θG`. They differ only
//! in how the local Jacobians are obtained: in closed form from the model,
//! or by central differences on `G` and on the local rewards. The third
//! engine differences `J` itself and needs `2p + 1` flow solves.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::par;
use crate::problem::Problem;
use crate::solvers::{solve_adjoint_matrix, solve_flows, SolverConfig};
use crate::sparse::{greedy_disjoint_groups, CsrMatrix};
use crate::types::{FlowVector, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEngine {
    Analytic,
    NumericJacobian,
    FiniteDifferenceJ,
}

impl GradientEngine {
    pub fn label(&self) -> &'static str {
        match self {
            GradientEngine::Analytic => "analytic",
            GradientEngine::NumericJacobian => "numeric",
            GradientEngine::FiniteDifferenceJ => "fdj",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    pub engine: GradientEngine,
    /// Central-difference step, used by the numeric and FD-J engines.
    pub fd_step: f64,
    pub solver: SolverConfig,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            engine: GradientEngine::Analytic,
            fd_step: 1e-8,
            solver: SolverConfig::default(),
        }
    }
}

impl GradientConfig {
    pub fn with_engine(engine: GradientEngine) -> Self {
        GradientConfig {
            engine,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub gradient: Vec<f64>,
    pub objective_value: f64,
    pub flows: FlowVector,
    pub adjoint: Option<Vec<f64>>,
    /// Fixed-point solves consumed.
    pub fp_solves: usize,
    /// Applications of `G`: fixed-point iterations plus difference probes.
    pub g_evals: usize,
}

/// Solves the flows once and evaluates `J(θ)`.
pub fn objective_value(
    problem: &Problem,
    theta: &ParamVector,
    solver: &SolverConfig,
) -> Result<(f64, FlowVector)> {
    let (value, flows, _) = evaluate(problem, theta, solver)?;
    Ok((value, flows))
}

fn evaluate(
    problem: &Problem,
    theta: &ParamVector,
    solver: &SolverConfig,
) -> Result<(f64, FlowVector, usize)> {
    let report = solve_flows(&problem.system, theta, solver)?;
    let value = problem.objective.value(&report.flows, theta)?;
    Ok((value, report.flows, report.iterations))
}

pub fn compute_gradient(
    problem: &Problem,
    theta: &ParamVector,
    config: &GradientConfig,
) -> Result<GradientReport> {
    match config.engine {
        GradientEngine::Analytic => grad_implicit_analytic(problem, theta, config),
        GradientEngine::NumericJacobian => grad_implicit_numeric(problem, theta, config),
        GradientEngine::FiniteDifferenceJ => grad_fd_on_j(problem, theta, config),
    }
}

fn check_step(config: &GradientConfig) -> Result<()> {
    if config.fd_step > 0.0 && config.fd_step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig("fd_step must be positive".into()))
    }
}

/// Implicit gradient with closed-form local Jacobians.
pub fn grad_implicit_analytic(
    problem: &Problem,
    theta: &ParamVector,
    config: &GradientConfig,
) -> Result<GradientReport> {
    let system = &problem.system;
    let flows = solve_flows(system, theta, &config.solver)?;
    let phi = &flows.flows;
    let objective_value = problem.objective.value(phi, theta)?;
    let (d_flow, d_theta) = problem.objective.partials(phi, theta)?;

    let a = system.eval_a(theta)?;
    let adjoint = solve_adjoint_matrix(&a, system.acyclic_order(), &d_flow, &config.solver)?;
    let y = adjoint.values;

    let coupling = system.adjoint_param_product(&y, phi);
    let gradient = d_theta.iter().zip(&coupling).map(|(f, g)| f + g).collect();
    Ok(GradientReport {
        gradient,
        objective_value,
        flows: flows.flows,
        adjoint: Some(y),
        fp_solves: 1,
        g_evals: flows.iterations,
    })
}

/// Implicit gradient with local Jacobians recovered by central differences
/// on `G` (probing structurally independent column groups together) and
/// on the local rewards.
pub fn grad_implicit_numeric(
    problem: &Problem,
    theta: &ParamVector,
    config: &GradientConfig,
) -> Result<GradientReport> {
    check_step(config)?;
    let h = config.fd_step;
    let system = &problem.system;
    let objective = problem.objective.as_ref();
    let n = system.dim();
    let p = system.param_dim();

    let flows = solve_flows(system, theta, &config.solver)?;
    let phi = flows.flows;
    let objective_value = objective.value(&phi, theta)?;

    // ∂_φG on the declared pattern.
    let pattern = system.sparsity();
    let mut entries_of_col: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, r, c) in pattern.entries() {
        entries_of_col[c].push((k, r));
    }
    let col_groups = pattern.column_groups();
    let probes = par::map_slice(&col_groups, |group| -> Result<Vec<(usize, f64)>> {
        let mut plus = phi.clone();
        let mut minus = phi.clone();
        for &c in group {
            plus[c] += h;
            minus[c] -= h;
        }
        let g_plus = system.eval_g(&plus, theta)?;
        let g_minus = system.eval_g(&minus, theta)?;
        Ok(group
            .iter()
            .flat_map(|&c| entries_of_col[c].iter())
            .map(|&(k, r)| (k, (g_plus[r] - g_minus[r]) / (2.0 * h)))
            .collect())
    });
    let mut a_values = vec![0.0; pattern.nnz()];
    for probe in probes {
        for (k, v) in probe? {
            a_values[k] = v;
        }
    }
    let a_hat = CsrMatrix::new(system.pattern_handle(), a_values);

    // ∂_θG, grouping parameters that touch disjoint rows.
    let param_rows = system.param_rows();
    let param_groups = greedy_disjoint_groups(&param_rows, n);
    let theta_probes = par::map_slice(&param_groups, |group| -> Result<Vec<(usize, usize, f64)>> {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        for &j in group {
            plus[j] += h;
            minus[j] -= h;
        }
        let g_plus = system.eval_g(&phi, &plus)?;
        let g_minus = system.eval_g(&phi, &minus)?;
        Ok(group
            .iter()
            .flat_map(|&j| param_rows[j].iter().map(move |&r| (j, r)))
            .map(|(j, r)| (r, j, (g_plus[r] - g_minus[r]) / (2.0 * h)))
            .collect())
    });
    let mut g_theta: Vec<(usize, usize, f64)> = Vec::new();
    for probe in theta_probes {
        g_theta.extend(probe?);
    }

    // ∂_φF, ∂_θF from the local rewards.
    let mut d_flow = vec![0.0; n];
    let mut d_theta = vec![0.0; p];
    for i in 0..n {
        let w = objective.weight(i);
        if w == 0.0 {
            continue;
        }
        let up = objective.local_reward(i, phi[i] + h, theta)?;
        let down = objective.local_reward(i, phi[i] - h, theta)?;
        d_flow[i] = w * (up - down) / (2.0 * h);
        for &j in objective.reward_params(i) {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[j] += h;
            minus[j] -= h;
            let up = objective.local_reward(i, phi[i], &plus)?;
            let down = objective.local_reward(i, phi[i], &minus)?;
            d_theta[j] += w * (up - down) / (2.0 * h);
        }
    }

    let adjoint = solve_adjoint_matrix(&a_hat, system.acyclic_order(), &d_flow, &config.solver)?;
    let y = adjoint.values;
    let mut gradient = d_theta;
    for (r, j, v) in g_theta {
        gradient[j] += y[r] * v;
    }
    Ok(GradientReport {
        gradient,
        objective_value,
        flows: phi,
        adjoint: Some(y),
        fp_solves: 1,
        g_evals: flows.iterations + 2 * (col_groups.len() + param_groups.len()),
    })
}

/// Difference stencil for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Stencil {
    /// `(J(θ+h e_j) − J(θ−h e_j)) / 2h`.
    Central(f64),
    /// Second-order one-sided `(−3J(θ) + 4J(θ+s e_j) − J(θ+2s e_j)) / 2s`,
    /// with signed step `s` pointing into the feasible set.
    OneSided(f64),
}

impl Stencil {
    fn offsets(&self) -> [f64; 2] {
        match *self {
            Stencil::Central(h) => [h, -h],
            Stencil::OneSided(s) => [s, 2.0 * s],
        }
    }

    fn derivative(&self, center: f64, first: f64, second: f64) -> f64 {
        match *self {
            Stencil::Central(h) => (first - second) / (2.0 * h),
            Stencil::OneSided(s) => (-3.0 * center + 4.0 * first - second) / (2.0 * s),
        }
    }
}

fn stencil(problem: &Problem, theta: &[f64], j: usize, h: f64) -> Result<Stencil> {
    let (down, up) = problem.feasible.room(theta, j);
    if down >= h && up >= h {
        return Ok(Stencil::Central(h));
    }
    // Too close to a face for a centred probe: difference into the side
    // with more room, at most half of it per step.
    let (room, sign) = if up >= down { (up, 1.0) } else { (down, -1.0) };
    let s = h.min(0.5 * room);
    if s > 0.0 {
        Ok(Stencil::OneSided(sign * s))
    } else {
        Err(Error::BoundaryProbe { param: j })
    }
}

/// Central differences on `J`: `2p + 1` flow solves.
pub fn grad_fd_on_j(
    problem: &Problem,
    theta: &ParamVector,
    config: &GradientConfig,
) -> Result<GradientReport> {
    check_step(config)?;
    check_dim("parameter vector", problem.param_dim(), theta.len())?;
    let (objective_value, flows, base_iters) = evaluate(problem, theta, &config.solver)?;
    let p = theta.len();
    let stencils = (0..p)
        .map(|j| stencil(problem, theta, j, config.fd_step))
        .collect::<Result<Vec<_>>>()?;

    // Probes are independent; each lands in its own slot so the result does
    // not depend on execution order.
    let probes: Vec<(usize, usize)> = (0..p).flat_map(|j| [(j, 0), (j, 1)]).collect();
    let values = par::map_slice(&probes, |&(j, side)| -> Result<(f64, usize)> {
        let mut shifted = theta.clone();
        shifted[j] += stencils[j].offsets()[side];
        let (v, _, iters) = evaluate(problem, &shifted, &config.solver)?;
        Ok((v, iters))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let gradient = (0..p)
        .map(|j| stencils[j].derivative(objective_value, values[2 * j].0, values[2 * j + 1].0))
        .collect();
    let g_evals = base_iters + values.iter().map(|(_, it)| it).sum::<usize>();
    Ok(GradientReport {
        gradient,
        objective_value,
        flows,
        adjoint: None,
        fp_solves: 2 * p + 1,
        g_evals,
    })
}
