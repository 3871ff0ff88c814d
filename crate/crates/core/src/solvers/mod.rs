//! Steady-state flows `φ = A(θ)φ + b(θ)` and the adjoint system
//! `(I − A(θ))ᵀ y = rhs`.

mod anderson;
mod linear;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sparse::CsrMatrix;
use crate::system::{check_matrix, AffineFlowSystem, CheckResult, SafetyConfig};
use crate::types::{FlowVector, ParamVector};

pub(crate) use linear::{solve_fixed_point, Orientation};

/// Systems up to this size use the dense LU path under [`SolverMethod::Auto`].
pub const DENSE_CROSSOVER: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Auto,
    DenseDirect,
    Picard,
    Anderson,
    AcyclicForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub fp_tolerance: f64,
    pub max_fp_iterations: usize,
    pub anderson_depth: usize,
    #[serde(skip)]
    pub safety: SafetyConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolverMethod::Auto,
            fp_tolerance: 1e-10,
            max_fp_iterations: 10_000,
            anderson_depth: 5,
            safety: SafetyConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: SolverMethod) -> Self {
        SolverConfig {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fp_tolerance > 0.0) {
            return Err(Error::InvalidConfig("fp_tolerance must be positive".into()));
        }
        if self.max_fp_iterations == 0 || self.anderson_depth == 0 {
            return Err(Error::InvalidConfig(
                "iteration budget and Anderson depth must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Resolves `Auto` for a system of dimension `dim`.
    pub fn resolve(&self, dim: usize, acyclic: bool) -> Result<SolverMethod> {
        Ok(match self.method {
            SolverMethod::Auto if acyclic => SolverMethod::AcyclicForward,
            SolverMethod::Auto if dim <= DENSE_CROSSOVER => SolverMethod::DenseDirect,
            SolverMethod::Auto => SolverMethod::Anderson,
            SolverMethod::AcyclicForward if !acyclic => {
                return Err(Error::InvalidConfig(
                    "acyclic forward solve requested on a cyclic system".into(),
                ))
            }
            m => m,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub flows: FlowVector,
    /// Fixed-point iterations `K_fp` (1 for the direct and acyclic paths).
    pub iterations: usize,
    /// `‖φ − A(θ)φ − b(θ)‖∞` at the returned flows.
    pub residual_norm: f64,
    pub method: SolverMethod,
    pub nonzeros: usize,
}

impl SolveReport {
    /// Work estimate counting one multiply-add per stored nonzero.
    pub fn sparse_work(&self) -> usize {
        self.iterations * self.nonzeros.max(1)
    }

    /// Work estimate under the dense `O(K_fp d²)` cost model.
    pub fn dense_work(&self) -> usize {
        let d = self.flows.len();
        self.iterations * d * d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointVector {
    pub values: Vec<f64>,
    pub iterations: usize,
    /// `‖(I − A)ᵀ y − rhs‖∞`.
    pub residual_norm: f64,
    pub method: SolverMethod,
}

fn ensure_safe(a: &CsrMatrix, acyclic: bool, config: &SolverConfig) -> Result<()> {
    match check_matrix(a, acyclic, &config.safety) {
        CheckResult::Pass(_) => Ok(()),
        CheckResult::Fail { estimate } => Err(Error::SafetyCheckFailed { estimate }),
    }
}

/// Steady-state flows at `theta`. Fails with `SafetyCheckFailed` when the
/// network cannot be certified open.
pub fn solve_flows(
    system: &AffineFlowSystem,
    theta: &ParamVector,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let a = system.eval_a(theta)?;
    let b = system.eval_b(theta)?;
    let order = system.acyclic_order();
    ensure_safe(&a, order.is_some(), config)?;
    let method = config.resolve(system.dim(), order.is_some())?;
    let sol = solve_fixed_point(&a, &b, order, Orientation::Direct, method, config)?;
    Ok(SolveReport {
        flows: FlowVector::new(sol.values),
        iterations: sol.iterations,
        residual_norm: sol.residual_norm,
        method,
        nonzeros: system.nnz(),
    })
}

/// Solves `(I − A(θ))ᵀ y = rhs`.
pub fn solve_adjoint(
    system: &AffineFlowSystem,
    theta: &ParamVector,
    rhs: &[f64],
    config: &SolverConfig,
) -> Result<AdjointVector> {
    config.validate()?;
    check_dim("adjoint right-hand side", system.dim(), rhs.len())?;
    let a = system.eval_a(theta)?;
    let order = system.acyclic_order();
    ensure_safe(&a, order.is_some(), config)?;
    solve_adjoint_matrix(&a, order, rhs, config)
}

/// Adjoint solve against an already evaluated (possibly numerically
/// approximated) propagation matrix sharing the system's pattern.
pub(crate) fn solve_adjoint_matrix(
    a: &CsrMatrix,
    order: Option<&[usize]>,
    rhs: &[f64],
    config: &SolverConfig,
) -> Result<AdjointVector> {
    let method = config.resolve(a.dim(), order.is_some())?;
    let sol = solve_fixed_point(a, rhs, order, Orientation::Transposed, method, config)?;
    Ok(AdjointVector {
        values: sol.values,
        iterations: sol.iterations,
        residual_norm: sol.residual_norm,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::norm_inf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jackson_toy() -> AffineFlowSystem {
        let mut b = AffineFlowSystem::builder(3, 2);
        b.add_entry(1, 0, 0.0, &[(0, 1.0)]).unwrap();
        b.add_entry(2, 0, 1.0, &[(0, -1.0)]).unwrap();
        b.add_entry(2, 1, 0.0, &[(1, 1.0)]).unwrap();
        b.add_input(0, 4.0, &[]).unwrap();
        b.build()
    }

    fn epn_routing() -> AffineFlowSystem {
        let p = [
            [0.0, 0.6, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.5, 0.3, 0.0],
            [0.2, 0.0, 0.0, 0.0, 0.5],
            [0.0, 0.0, 0.0, 0.0, 0.7],
            [0.0, 0.0, 0.4, 0.0, 0.0],
        ];
        let lam = [2.0, 1.0, 0.5, 0.5, 1.0];
        let mut b = AffineFlowSystem::builder(5, 0);
        for (i, row) in p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v > 0.0 {
                    b.add_entry(j, i, *v, &[]).unwrap();
                }
            }
            b.add_input(i, lam[i], &[]).unwrap();
        }
        b.build()
    }

    const ALL: [SolverMethod; 4] = [
        SolverMethod::Auto,
        SolverMethod::DenseDirect,
        SolverMethod::Picard,
        SolverMethod::Anderson,
    ];

    #[test]
    fn jackson_flows_every_method() {
        let sys = jackson_toy();
        for m in ALL.into_iter().chain([SolverMethod::AcyclicForward]) {
            let r = solve_flows(&sys, &[0.8, 0.8].into(), &SolverConfig::with_method(m)).unwrap();
            for (a, b) in r.flows.iter().zip([4.0, 3.2, 3.36]) {
                assert!((a - b).abs() < 1e-10, "{m:?}: {:?}", r.flows);
            }
            assert!(r.residual_norm <= 1e-10);
        }
        let r = solve_flows(&sys, &[0.8, 0.8].into(), &SolverConfig::default()).unwrap();
        assert_eq!(r.method, SolverMethod::AcyclicForward);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn jackson_scenario_one_optimum_flows() {
        let r = solve_flows(&jackson_toy(), &[0.3313, 0.0].into(), &SolverConfig::default()).unwrap();
        assert!((r.flows[1] - 1.33).abs() < 1e-2);
        assert!((r.flows[2] - 2.67).abs() < 1e-2);
    }

    #[test]
    fn epn_flows_match_reported_values() {
        let sys = epn_routing();
        assert!(sys.acyclic_order().is_none());
        for m in ALL {
            let r = solve_flows(&sys, &ParamVector::zeros(0), &SolverConfig::with_method(m)).unwrap();
            for (a, b) in r.flows.iter().zip([2.64, 2.58, 3.19, 1.27, 3.48]) {
                assert!((a - b).abs() < 1e-2, "{m:?}: {:?}", r.flows);
            }
            assert!(r.residual_norm <= 1e-10);
        }
        let err = solve_flows(
            &sys,
            &ParamVector::zeros(0),
            &SolverConfig::with_method(SolverMethod::AcyclicForward),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn zero_propagation_solves_in_one_step() {
        let mut b = AffineFlowSystem::builder(3, 0);
        for i in 0..3 {
            b.add_input(i, (i + 1) as f64, &[]).unwrap();
        }
        let sys = b.build();
        for m in ALL {
            let r = solve_flows(&sys, &ParamVector::zeros(0), &SolverConfig::with_method(m)).unwrap();
            assert_eq!(r.flows.as_slice(), &[1.0, 2.0, 3.0]);
            assert_eq!(r.iterations, 1, "{m:?}");
        }
    }

    #[test]
    fn adjoint_back_substitution() {
        let sys = jackson_toy();
        let rhs = [1.5, 5.0 / 1.8f64.powi(2), 7.0 / 3.64f64.powi(2)];
        for m in ALL.into_iter().chain([SolverMethod::AcyclicForward]) {
            let y = solve_adjoint(&sys, &[0.8, 0.8].into(), &rhs, &SolverConfig::with_method(m)).unwrap();
            for (a, b) in y.values.iter().zip([3.18, 1.97, 0.53]) {
                assert!((a - b).abs() < 1e-2, "{m:?}: {:?}", y.values);
            }
            assert!(y.residual_norm <= 1e-10);
        }
        let zero = solve_adjoint(&sys, &[0.8, 0.8].into(), &[0.0; 3], &SolverConfig::default()).unwrap();
        assert_eq!(zero.values, vec![0.0; 3]);
    }

    #[test]
    fn epn_adjoint_from_reported_rhs() {
        let sys = epn_routing();
        let rhs = [1.25, 1.18, 4.37, 0.50, 8.84];
        for m in ALL {
            let y = solve_adjoint(&sys, &ParamVector::zeros(0), &rhs, &SolverConfig::with_method(m)).unwrap();
            // The reported rhs is itself rounded to two decimals.
            for (a, b) in y.values.iter().zip([7.68, 10.72, 12.90, 10.30, 13.99]) {
                assert!((a - b).abs() < 2e-2, "{m:?}: {:?}", y.values);
            }
            assert!(y.residual_norm <= 1e-10);
        }
    }

    #[test]
    fn unsafe_system_is_rejected() {
        let mut b = AffineFlowSystem::builder(2, 0);
        b.add_entry(0, 1, 1.0, &[]).unwrap();
        b.add_entry(1, 0, 1.0, &[]).unwrap();
        b.add_input(0, 1.0, &[]).unwrap();
        let sys = b.build();
        let err = solve_flows(&sys, &ParamVector::zeros(0), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SafetyCheckFailed { .. }));
        let err = solve_adjoint(&sys, &ParamVector::zeros(0), &[1.0, 1.0], &SolverConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::SafetyCheckFailed { .. }));
    }

    #[test]
    fn exhausted_budget_reports_no_convergence() {
        let sys = epn_routing();
        let cfg = SolverConfig {
            method: SolverMethod::Picard,
            max_fp_iterations: 3,
            ..SolverConfig::default()
        };
        match solve_flows(&sys, &ParamVector::zeros(0), &cfg).unwrap_err() {
            Error::NoConvergence { iterations, residual } => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig {
            fp_tolerance: 0.0,
            ..SolverConfig::default()
        };
        assert!(solve_flows(&jackson_toy(), &[0.5, 0.5].into(), &cfg).is_err());
    }

    /// Random system with row sums ≤ 0.9; cyclic unless `acyclic`.
    fn random_system(rng: &mut ChaCha8Rng, d: usize, acyclic: bool) -> AffineFlowSystem {
        let mut b = AffineFlowSystem::builder(d, 0);
        for r in 0..d {
            let cols: Vec<usize> = (0..d)
                .filter(|&c| c != r && (!acyclic || c < r) && rng.random_bool(0.4))
                .collect();
            let mut weights: Vec<f64> = cols.iter().map(|_| rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum::<f64>().max(1e-12);
            let scale = rng.random_range(0.0..0.9) / total;
            weights.iter_mut().for_each(|w| *w *= scale);
            for (c, w) in cols.iter().zip(weights) {
                b.add_entry(r, *c, w, &[]).unwrap();
            }
            b.add_input(r, rng.random_range(0.0..3.0), &[]).unwrap();
        }
        b.build()
    }

    #[test]
    fn methods_agree_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let d = rng.random_range(1..=20);
            let acyclic = case % 2 == 0;
            let sys = random_system(&mut rng, d, acyclic);
            let theta = ParamVector::zeros(0);
            let reference = solve_flows(&sys, &theta, &SolverConfig::with_method(SolverMethod::DenseDirect))
                .unwrap()
                .flows;
            let mut methods = vec![SolverMethod::Picard, SolverMethod::Anderson];
            if sys.acyclic_order().is_some() {
                methods.push(SolverMethod::AcyclicForward);
            }
            for m in methods {
                let f = solve_flows(&sys, &theta, &SolverConfig::with_method(m)).unwrap().flows;
                let diff: Vec<f64> = f.iter().zip(reference.iter()).map(|(a, b)| a - b).collect();
                assert!(norm_inf(&diff) <= 1e-8, "case {case} {m:?}");
            }
            let rhs: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for m in [SolverMethod::DenseDirect, SolverMethod::Picard, SolverMethod::Anderson] {
                let y = solve_adjoint(&sys, &theta, &rhs, &SolverConfig::with_method(m)).unwrap();
                // (I − A)ᵀ y − rhs
                let a = sys.eval_a(&theta).unwrap();
                let mut aty = vec![0.0; d];
                a.mul_transpose_add(&y.values, &vec![0.0; d], &mut aty);
                let res: Vec<f64> = (0..d).map(|i| y.values[i] - aty[i] - rhs[i]).collect();
                assert!(norm_inf(&res) <= 1e-10, "case {case} {m:?}");
            }
        }
    }

    #[test]
    fn acyclic_flows_equal_neumann_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let d = rng.random_range(1..=15);
            let sys = random_system(&mut rng, d, true);
            let theta = ParamVector::zeros(0);
            let a = sys.eval_a(&theta).unwrap();
            let b = sys.eval_b(&theta).unwrap();
            // Σ_{n=0}^{d} Aⁿ b, exact for nilpotent A.
            let mut term = b.clone();
            let mut sum = b.clone();
            let zero = vec![0.0; d];
            for _ in 0..d {
                let mut next = vec![0.0; d];
                a.mul_add(&term, &zero, &mut next);
                for i in 0..d {
                    sum[i] += next[i];
                }
                term = next;
            }
            let f = solve_flows(&sys, &theta, &SolverConfig::default()).unwrap().flows;
            for i in 0..d {
                assert!((f[i] - sum[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn large_cyclic_system_uses_anderson() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 600;
        let mut b = AffineFlowSystem::builder(d, 0);
        for r in 0..d {
            for _ in 0..3 {
                let c = rng.random_range(0..d);
                if c != r {
                    b.add_entry(r, c, 0.25, &[]).unwrap();
                }
            }
            b.add_input(r, 1.0, &[]).unwrap();
        }
        let sys = b.build();
        let r = solve_flows(&sys, &ParamVector::zeros(0), &SolverConfig::default()).unwrap();
        assert_eq!(r.method, SolverMethod::Anderson);
        assert!(r.residual_norm <= 1e-10);
        assert!(r.sparse_work() < r.dense_work());
    }
}
