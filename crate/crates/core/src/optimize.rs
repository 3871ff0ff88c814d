//! Projected gradient descent `θ_{k+1} = Π_U(θ_k − η_k ∇J(θ_k))`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{compute_gradient, objective_value, GradientConfig, GradientReport};
use crate::problem::Problem;
use crate::types::{norm2, ParamVector};

/// Backtracking stops once the step falls below this.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// Fixed step. A step that lands on an unstable operating point is
    /// halved until it does not.
    Constant { eta: f64 },
    /// Projected Armijo backtracking from `initial`, shrinking by `shrink`,
    /// accepting when `J(θ⁺) ≤ J(θ) − slope·⟨∇J, θ − θ⁺⟩`.
    Armijo { initial: f64, shrink: f64, slope: f64 },
}

impl StepRule {
    pub fn armijo(initial: f64) -> Self {
        StepRule::Armijo {
            initial,
            shrink: 0.5,
            slope: 1e-4,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepRule::Constant { eta } => eta > 0.0,
            StepRule::Armijo {
                initial,
                shrink,
                slope,
            } => initial > 0.0 && shrink > 0.0 && shrink < 1.0 && slope > 0.0 && slope < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid step rule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub step_rule: StepRule,
    pub eps_j: f64,
    pub eps_grad: f64,
    pub max_iter: usize,
    pub gradient: GradientConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            step_rule: StepRule::Constant { eta: 0.05 },
            eps_j: 1e-6,
            eps_grad: 1e-4,
            max_iter: 500,
            gradient: GradientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    RelativeJ,
    GradNorm,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    /// Step size that produced this iterate (0 for the start point).
    pub step: f64,
    /// Fixed-point solves spent on this iterate, line search included.
    pub fp_solves: usize,
    pub g_evals: usize,
    /// Seconds spent on this iterate.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl OptimizeTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.k)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn total_fp_solves(&self) -> usize {
        self.records.iter().map(|r| r.fp_solves).sum()
    }

    pub fn total_wall_time(&self) -> f64 {
        self.records.iter().map(|r| r.wall_time).sum()
    }
}

struct Step {
    theta: ParamVector,
    size: f64,
    fp_solves: usize,
    g_evals: usize,
}

/// Runs projected gradient descent from `theta0`.
pub fn optimize(
    problem: &Problem,
    theta0: &ParamVector,
    config: &OptimizeConfig,
) -> Result<(ParamVector, OptimizeTrace)> {
    config.step_rule.validate()?;
    if !(config.eps_j > 0.0 && config.eps_grad > 0.0) {
        return Err(Error::InvalidConfig("stopping tolerances must be positive".into()));
    }
    if !problem.feasible.contains(theta0, 1e-12) {
        return Err(Error::InfeasibleStart);
    }

    let started = Instant::now();
    let mut theta = theta0.clone();
    let mut current = compute_gradient(problem, &theta, &config.gradient)?;
    let mut records = vec![record(0, &theta, &current, 0.0, current.fp_solves, current.g_evals, started)];
    if norm2(&current.gradient) <= config.eps_grad {
        return Ok((
            theta,
            OptimizeTrace {
                records,
                termination: Termination::GradNorm,
            },
        ));
    }

    for k in 1..=config.max_iter {
        let started = Instant::now();
        let step = take_step(problem, &theta, &current, config, k)?;
        let next = compute_gradient(problem, &step.theta, &config.gradient)?;
        records.push(record(
            k,
            &step.theta,
            &next,
            step.size,
            step.fp_solves + next.fp_solves,
            step.g_evals + next.g_evals,
            started,
        ));

        let previous = current.objective_value;
        let relative = (next.objective_value - previous).abs() / previous.abs().max(1.0);
        theta = step.theta;
        current = next;
        let termination = if relative <= config.eps_j {
            Some(Termination::RelativeJ)
        } else if norm2(&current.gradient) <= config.eps_grad {
            Some(Termination::GradNorm)
        } else if k == config.max_iter {
            Some(Termination::MaxIter)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok((theta, OptimizeTrace { records, termination }));
        }
    }
    // max_iter == 0
    Ok((
        theta,
        OptimizeTrace {
            records,
            termination: Termination::MaxIter,
        },
    ))
}

fn record(
    k: usize,
    theta: &ParamVector,
    report: &GradientReport,
    step: f64,
    fp_solves: usize,
    g_evals: usize,
    started: Instant,
) -> IterationRecord {
    IterationRecord {
        k,
        theta: theta.to_vec(),
        objective: report.objective_value,
        grad_norm: norm2(&report.gradient),
        step,
        fp_solves,
        g_evals,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

fn candidate(problem: &Problem, theta: &ParamVector, gradient: &[f64], t: f64) -> Result<ParamVector> {
    let moved: Vec<f64> = theta.iter().zip(gradient).map(|(x, g)| x - t * g).collect();
    problem.feasible.project(&moved)
}

fn take_step(
    problem: &Problem,
    theta: &ParamVector,
    current: &GradientReport,
    config: &OptimizeConfig,
    iteration: usize,
) -> Result<Step> {
    let solver = &config.gradient.solver;
    let gradient = &current.gradient;
    let mut fp_solves = 0;
    let mut g_evals = 0;
    match config.step_rule {
        StepRule::Constant { eta } => {
            let mut t = eta;
            while t >= MIN_STEP {
                let next = candidate(problem, theta, gradient, t)?;
                // Stability probe; the gradient evaluation that follows
                // re-solves at the accepted point.
                match objective_value(problem, &next, solver) {
                    Ok(_) => {
                        return Ok(Step {
                            theta: next,
                            size: t,
                            fp_solves,
                            g_evals,
                        })
                    }
                    Err(Error::UnstableOperatingPoint { .. }) => {
                        fp_solves += 1;
                        g_evals += 1;
                        t *= 0.5;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::AllStepsRejected { iteration })
        }
        StepRule::Armijo {
            initial,
            shrink,
            slope,
        } => {
            let mut t = initial;
            while t >= MIN_STEP {
                let next = candidate(problem, theta, gradient, t)?;
                let decrease: f64 = gradient
                    .iter()
                    .zip(theta.iter().zip(next.iter()))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                if decrease <= 0.0 {
                    // Projected step does not move: θ is stationary on U.
                    return Ok(Step {
                        theta: theta.clone(),
                        size: 0.0,
                        fp_solves,
                        g_evals,
                    });
                }
                fp_solves += 1;
                match objective_value(problem, &next, solver) {
                    Ok((value, _)) if value <= current.objective_value - slope * decrease => {
                        return Ok(Step {
                            theta: next,
                            size: t,
                            fp_solves,
                            g_evals,
                        });
                    }
                    Ok(_) | Err(Error::UnstableOperatingPoint { .. }) => t *= shrink,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::AllStepsRejected { iteration })
        }
    }
}
