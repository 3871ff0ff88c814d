use std::fs;
use std::path::Path;
use std::time::Instant;

use pgflow::gradients::{compute_gradient, objective_value, GradientConfig, GradientEngine};
use pgflow::models::metrics::queue_metrics;
use pgflow::models::{generate_dag, DagGenSpec, ModelFile};
use pgflow::optimize::{optimize as run_pgd, OptimizeConfig, StepRule};
use pgflow::sim::{geometric_fit, simulate_jackson, SimConfig};
use pgflow::solvers::{solve_flows, SolverConfig, SolverMethod};
use pgflow::system::spectral_safety_check;
use pgflow::types::{FeasibleSet, ParamVector};
use pgflow::Problem;
use rayon::prelude::*;
use serde_json::json;

use crate::output::{csv_number, print_json, print_text, trace_csv, CmdResult, Failure};
use crate::{
    BenchmarkArgs, Engine, GenerateArgs, GradArgs, GradientArgs, Method, ModelArgs, OptimizeArgs, Rule, SimulateArgs,
    SolveArgs, SolverArgs, StepArgs,
};

fn load(path: &Path) -> CmdResult<ModelFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input("Io", format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Centre of the feasible set: box midpoint, or an even split of the budget.
fn centre(set: &FeasibleSet) -> ParamVector {
    match set {
        FeasibleSet::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect::<Vec<_>>().into(),
        FeasibleSet::BudgetSimplex { dim, budget } => ParamVector::new(vec![budget / *dim as f64; *dim]),
    }
}

fn theta_for(problem: &Problem, given: &Option<Vec<f64>>, require_feasible: bool) -> CmdResult<ParamVector> {
    let theta = match given {
        Some(v) => ParamVector::new(v.clone()),
        None => centre(&problem.feasible),
    };
    if theta.len() != problem.param_dim() {
        return Err(pgflow::Error::DimensionMismatch {
            what: "theta",
            expected: problem.param_dim(),
            found: theta.len(),
        }
        .into());
    }
    if require_feasible && !problem.feasible.contains(&theta, 1e-12) {
        return Err(Failure::input("InfeasibleTheta", "theta lies outside the feasible set"));
    }
    Ok(theta)
}

fn open(args: &ModelArgs, require_feasible: bool) -> CmdResult<(ModelFile, Problem, ParamVector)> {
    let file = load(&args.model)?;
    let problem = file.build()?;
    let theta = theta_for(&problem, &args.theta, require_feasible)?;
    Ok((file, problem, theta))
}

fn solver_config(a: &SolverArgs) -> CmdResult<SolverConfig> {
    let method = match a.method {
        Method::Auto => SolverMethod::Auto,
        Method::Dense => SolverMethod::DenseDirect,
        Method::Picard => SolverMethod::Picard,
        Method::Anderson => SolverMethod::Anderson,
        Method::Acyclic => SolverMethod::AcyclicForward,
    };
    let cfg = SolverConfig {
        method,
        fp_tolerance: a.fp_tol,
        max_fp_iterations: a.max_fp_iter,
        anderson_depth: a.anderson_depth,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn engine(e: Engine) -> GradientEngine {
    match e {
        Engine::Analytic => GradientEngine::Analytic,
        Engine::Numeric => GradientEngine::NumericJacobian,
        Engine::Fdj => GradientEngine::FiniteDifferenceJ,
    }
}

fn gradient_config(g: &GradientArgs, solver: SolverConfig) -> GradientConfig {
    GradientConfig {
        engine: engine(g.engine),
        fd_step: g.fd_step,
        solver,
    }
}

fn optimize_config(s: &StepArgs, gradient: GradientConfig) -> OptimizeConfig {
    let step_rule = match s.step_rule {
        Rule::Constant => StepRule::Constant { eta: s.eta },
        Rule::Armijo => StepRule::Armijo {
            initial: s.eta,
            shrink: s.armijo_shrink,
            slope: s.armijo_slope,
        },
    };
    OptimizeConfig {
        step_rule,
        eps_j: s.eps_j,
        eps_grad: s.eps_grad,
        max_iter: s.max_iter,
        gradient,
    }
}

pub fn solve(a: SolveArgs) -> CmdResult {
    let (file, problem, theta) = open(&a.model, true)?;
    let cfg = solver_config(&a.solver)?;
    let started = Instant::now();
    let safety = spectral_safety_check(&problem.system, &theta, &cfg.safety)?;
    let report = solve_flows(&problem.system, &theta, &cfg)?;
    let wall_time = started.elapsed().as_secs_f64();
    print_json(&json!({
        "command": "solve",
        "model_type": file.model_type(),
        "config": cfg,
        "theta": theta,
        "flows": report.flows,
        "residual_norm": report.residual_norm,
        "iterations": report.iterations,
        "method": report.method,
        "nonzeros": report.nonzeros,
        "sparse_work": report.sparse_work(),
        "dense_work": report.dense_work(),
        "safety": format!("{safety:?}"),
        "wall_time": wall_time,
    }))
}

pub fn grad(a: GradArgs) -> CmdResult {
    let (file, problem, theta) = open(&a.model, true)?;
    let cfg = gradient_config(&a.gradient, solver_config(&a.solver)?);
    let started = Instant::now();
    let report = compute_gradient(&problem, &theta, &cfg)?;
    let wall_time = started.elapsed().as_secs_f64();
    print_json(&json!({
        "command": "grad",
        "model_type": file.model_type(),
        "config": cfg,
        "engine": cfg.engine.label(),
        "theta": theta,
        "gradient": report.gradient,
        "objective": report.objective_value,
        "flows": report.flows,
        "adjoint": report.adjoint,
        "fp_solves": report.fp_solves,
        "g_evals": report.g_evals,
        "wall_time": wall_time,
    }))
}

pub fn optimize(a: OptimizeArgs) -> CmdResult {
    let (file, problem, theta0) = open(&a.model, false)?;
    let cfg = optimize_config(&a.step, gradient_config(&a.gradient, solver_config(&a.solver)?));
    let (theta, trace) = run_pgd(&problem, &theta0, &cfg)?;
    let (objective, flows) = objective_value(&problem, &theta, &cfg.gradient.solver)?;
    fs::write(&a.trace, trace_csv(&trace, problem.param_dim()))
        .map_err(|e| Failure::input("Io", format!("cannot write {}: {e}", a.trace.display())))?;
    let fp_solves: usize = trace.records.iter().map(|r| r.fp_solves).sum();
    let g_evals: usize = trace.records.iter().map(|r| r.g_evals).sum();
    print_json(&json!({
        "command": "optimize",
        "model_type": file.model_type(),
        "config": cfg,
        "engine": cfg.gradient.engine.label(),
        "theta0": theta0,
        "theta_star": theta,
        "objective": objective,
        "flows": flows,
        "termination": trace.termination,
        "iterations": trace.iterations(),
        "fp_solves": fp_solves,
        "g_evals": g_evals,
        "wall_time": trace.total_wall_time(),
        "trace_path": a.trace.display().to_string(),
    }))
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    let spec = DagGenSpec {
        d: a.d,
        p: a.p,
        seed: a.seed,
        lambda0: a.lambda0,
        mu_slow: a.mu_slow,
        mu_fast: a.mu_fast,
    };
    let (model, record) = generate_dag(&spec)?;
    if let Some(path) = &a.record {
        fs::write(path, serde_json::to_string_pretty(&record)?)
            .map_err(|e| Failure::input("Io", format!("cannot write {}: {e}", path.display())))?;
    }
    let file = if a.spec_only {
        ModelFile::DagSpec(spec)
    } else {
        ModelFile::Jackson(model)
    };
    print_json(&file)
}

struct Row {
    d: usize,
    p: usize,
    seed: u64,
    engine: Engine,
    outcome: Result<(f64, usize, f64, usize, String), String>,
}

pub fn benchmark(a: BenchmarkArgs) -> CmdResult {
    let engines: Vec<Engine> = a
        .engines
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| <Engine as clap::ValueEnum>::from_str(s, true).map_err(|_| Failure::input("Usage", format!("unknown engine {s:?}"))))
        .collect::<CmdResult<_>>()?;
    if engines.is_empty() {
        return Err(Failure::input("Usage", "engine list is empty"));
    }
    let pairs: Vec<(usize, usize)> = match (a.d.len(), a.p.len()) {
        (n, m) if n == m => a.d.iter().copied().zip(a.p.iter().copied()).collect(),
        (1, _) => a.p.iter().map(|&p| (a.d[0], p)).collect(),
        (_, 1) => a.d.iter().map(|&d| (d, a.p[0])).collect(),
        (n, m) => return Err(Failure::input("Usage", format!("--d has {n} values but --p has {m}"))),
    };
    let mut instances = Vec::new();
    for &(d, p) in &pairs {
        for seed in a.seed..a.seed + a.seeds {
            let (model, _) = generate_dag(&DagGenSpec::new(d, p, seed))?;
            instances.push(((d, p, seed), model.build()?));
        }
    }
    let mut jobs = Vec::new();
    for (k, _) in instances.iter().enumerate() {
        for &e in &engines {
            jobs.push((k, e));
        }
    }
    let mut rows: Vec<Row> = jobs
        .par_iter()
        .map(|&(k, e)| {
            let ((d, p, seed), problem) = &instances[k];
            let cfg = optimize_config(&a.step, GradientConfig::with_engine(engine(e)));
            let theta0 = centre(&problem.feasible);
            let outcome = run_pgd(problem, &theta0, &cfg)
                .map(|(_, trace)| {
                    (
                        trace.final_objective(),
                        trace.iterations(),
                        trace.total_wall_time(),
                        trace.total_fp_solves(),
                        format!("{:?}", trace.termination),
                    )
                })
                .map_err(|err| err.kind().to_string());
            Row {
                d: *d,
                p: *p,
                seed: *seed,
                engine: e,
                outcome,
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.d, r.p, r.seed, r.engine));

    let mut out = String::from("d,p,seed,engine,status,J_star,iterations,wall_time,fp_solves,termination\n");
    for r in &rows {
        let label = engine(r.engine).label();
        match &r.outcome {
            Ok((j, it, wall, fp, term)) => out.push_str(&format!(
                "{},{},{},{label},ok,{},{it},{},{fp},{term}\n",
                r.d,
                r.p,
                r.seed,
                csv_number(*j),
                csv_number(*wall)
            )),
            Err(kind) => out.push_str(&format!("{},{},{},{label},{kind},,,,,\n", r.d, r.p, r.seed)),
        }
    }
    match &a.output {
        Some(path) => {
            fs::write(path, out).map_err(|e| Failure::input("Io", format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print_text(&out)
        }
    }
}

pub fn simulate(a: SimulateArgs) -> CmdResult {
    let file = load(&a.model.model)?;
    let Some(model) = file.jackson()? else {
        return Err(Failure::input(
            "Unsupported",
            format!("simulation unsupported for model_type {}", file.model_type()),
        ));
    };
    let problem = model.build()?;
    let theta = theta_for(&problem, &a.model.theta, true)?;
    let cfg = SimConfig {
        horizon: a.horizon,
        warmup: a.warmup,
        seed: a.seed,
        replications: a.replications,
    };
    let started = Instant::now();
    let result = simulate_jackson(&model, &theta, &cfg)?;
    let wall_time = started.elapsed().as_secs_f64();

    let flows = solve_flows(&problem.system, &theta, &SolverConfig::default())?.flows;
    let rho: Vec<f64> = flows.iter().zip(&model.mu).map(|(f, m)| f / m).collect();
    let metrics = queue_metrics(&rho)?;
    let means: Vec<f64> = metrics.iter().map(|m| m.mean_length).collect();
    let fit = if cfg.replications >= 2 {
        Some(geometric_fit(&result, &rho, 6, 0.01)?)
    } else {
        None
    };
    print_json(&json!({
        "command": "simulate",
        "model_type": file.model_type(),
        "config": cfg,
        "theta": theta,
        "mean_lengths": result.mean_lengths,
        "total_mean_length": result.total_mean_length,
        "throughputs": result.throughputs,
        "product_form": {
            "flows": flows,
            "mean_lengths": means,
            "total_mean_length": means.iter().sum::<f64>(),
        },
        "geometric_fit": fit,
        "events": result.events,
        "wall_time": wall_time,
    }))
}
