//! The affine flow operator `G(φ, θ) = A(θ) φ + b(θ)`.
//!
//! Every entry of `A` and `b` is an affine form in the parameters,
//! `c + Σ_j a_j θ_j`, so the parameter sensitivities `∂A/∂θ_j` and
//! `∂b/∂θ_j` are sparse constant matrices stored alongside the values.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::sparse::{CsrMatrix, SparsityPattern};
use crate::types::{FlowVector, ParamVector};

/// Affine forms `c_k + Σ a_{k,j} θ_j`, one per slot, stored flat.
#[derive(Debug, Clone, PartialEq, Default)]
struct AffineForms {
    constant: Vec<f64>,
    term_ptr: Vec<usize>,
    term_param: Vec<usize>,
    term_coef: Vec<f64>,
}

impl AffineForms {
    fn push(&mut self, constant: f64, terms: &[(usize, f64)]) {
        if self.term_ptr.is_empty() {
            self.term_ptr.push(0);
        }
        self.constant.push(constant);
        for &(j, a) in terms {
            self.term_param.push(j);
            self.term_coef.push(a);
        }
        self.term_ptr.push(self.term_param.len());
    }

    fn len(&self) -> usize {
        self.constant.len()
    }

    fn terms(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.term_ptr[k]..self.term_ptr[k + 1];
        self.term_param[range.clone()]
            .iter()
            .copied()
            .zip(self.term_coef[range].iter().copied())
    }

    fn eval(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                self.terms(k)
                    .fold(self.constant[k], |acc, (j, a)| acc + a * theta[j])
            })
            .collect()
    }
}

/// Collects entries of `A` and `b` before the sparsity pattern is frozen.
#[derive(Debug, Clone)]
pub struct FlowSystemBuilder {
    dim: usize,
    param_dim: usize,
    entries: BTreeMap<(usize, usize), (f64, Vec<(usize, f64)>)>,
    inputs: Vec<(f64, Vec<(usize, f64)>)>,
}

impl FlowSystemBuilder {
    pub fn new(dim: usize, param_dim: usize) -> Self {
        FlowSystemBuilder {
            dim,
            param_dim,
            entries: BTreeMap::new(),
            inputs: vec![(0.0, Vec::new()); dim],
        }
    }

    /// Adds `constant + Σ coef·θ_param` to `A[row, col]`. Repeated
    /// positions accumulate.
    pub fn add_entry(
        &mut self,
        row: usize,
        col: usize,
        constant: f64,
        terms: &[(usize, f64)],
    ) -> Result<&mut Self> {
        self.check_terms(terms)?;
        if row >= self.dim || col >= self.dim {
            return Err(Error::InvalidModel(format!(
                "entry ({row}, {col}) outside a {0}x{0} system",
                self.dim
            )));
        }
        let slot = self.entries.entry((row, col)).or_default();
        slot.0 += constant;
        merge_terms(&mut slot.1, terms);
        Ok(self)
    }

    /// Adds `constant + Σ coef·θ_param` to `b[row]`.
    pub fn add_input(&mut self, row: usize, constant: f64, terms: &[(usize, f64)]) -> Result<&mut Self> {
        self.check_terms(terms)?;
        if row >= self.dim {
            return Err(Error::InvalidModel(format!(
                "input row {row} outside a system of dimension {}",
                self.dim
            )));
        }
        let slot = &mut self.inputs[row];
        slot.0 += constant;
        merge_terms(&mut slot.1, terms);
        Ok(self)
    }

    fn check_terms(&self, terms: &[(usize, f64)]) -> Result<()> {
        for &(j, a) in terms {
            if j >= self.param_dim {
                return Err(Error::InvalidModel(format!(
                    "parameter index {j} out of range (p = {})",
                    self.param_dim
                )));
            }
            if !a.is_finite() {
                return Err(Error::InvalidModel("non-finite coefficient".into()));
            }
        }
        Ok(())
    }

    pub fn build(self) -> AffineFlowSystem {
        let positions: Vec<(usize, usize)> = self.entries.keys().copied().collect();
        let pattern = Arc::new(SparsityPattern::from_sorted(self.dim, &positions));
        let mut a = AffineForms::default();
        for (constant, terms) in self.entries.values() {
            a.push(*constant, terms);
        }
        let mut b = AffineForms::default();
        for (constant, terms) in &self.inputs {
            b.push(*constant, terms);
        }
        let acyclic_order = pattern.topological_order();
        AffineFlowSystem {
            dim: self.dim,
            param_dim: self.param_dim,
            pattern,
            a,
            b,
            acyclic_order,
        }
    }
}

fn merge_terms(into: &mut Vec<(usize, f64)>, terms: &[(usize, f64)]) {
    for &(j, a) in terms {
        match into.iter_mut().find(|(k, _)| *k == j) {
            Some(slot) => slot.1 += a,
            None => into.push((j, a)),
        }
    }
    into.sort_by_key(|(j, _)| *j);
}

/// One nonzero of a parameter sensitivity: `∂M[row, col]/∂θ_param = coef`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub row: usize,
    pub col: usize,
    pub param: usize,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineFlowSystem {
    dim: usize,
    param_dim: usize,
    pattern: Arc<SparsityPattern>,
    a: AffineForms,
    b: AffineForms,
    acyclic_order: Option<Vec<usize>>,
}

impl AffineFlowSystem {
    pub fn builder(dim: usize, param_dim: usize) -> FlowSystemBuilder {
        FlowSystemBuilder::new(dim, param_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn sparsity(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub(crate) fn pattern_handle(&self) -> Arc<SparsityPattern> {
        self.pattern.clone()
    }

    /// Topological permutation making `A` strictly lower triangular, present
    /// iff the dependency graph is acyclic.
    pub fn acyclic_order(&self) -> Option<&[usize]> {
        self.acyclic_order.as_deref()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.param_dim, theta.len())
    }

    pub fn eval_a(&self, theta: &ParamVector) -> Result<CsrMatrix> {
        self.check_theta(theta)?;
        Ok(CsrMatrix::new(self.pattern.clone(), self.a.eval(theta)))
    }

    pub fn eval_b(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(self.b.eval(theta))
    }

    /// Nonzeros of `∂A/∂θ_j` for every `j`, as `(row, col, param, coef)`.
    pub fn eval_da(&self) -> Vec<Sensitivity> {
        self.pattern
            .entries()
            .flat_map(|(k, row, col)| {
                self.a.terms(k).map(move |(param, coef)| Sensitivity {
                    row,
                    col,
                    param,
                    coef,
                })
            })
            .collect()
    }

    /// Nonzeros of the `d × p` matrix `∂b/∂θ`; `col` is unused and set to 0.
    pub fn eval_db(&self) -> Vec<Sensitivity> {
        (0..self.dim)
            .flat_map(|row| {
                self.b.terms(row).map(move |(param, coef)| Sensitivity {
                    row,
                    col: 0,
                    param,
                    coef,
                })
            })
            .collect()
    }

    /// Rows of `G` that depend on each parameter.
    pub fn param_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.param_dim];
        for s in self.eval_da().into_iter().chain(self.eval_db()) {
            if rows[s.param].last() != Some(&s.row) {
                rows[s.param].push(s.row);
            }
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        rows
    }

    /// `G(φ, θ) = A(θ) φ + b(θ)`.
    pub fn eval_g(&self, phi: &FlowVector, theta: &ParamVector) -> Result<FlowVector> {
        check_dim("flow vector", self.dim, phi.len())?;
        let a = self.eval_a(theta)?;
        let b = self.b.eval(theta);
        let mut out = vec![0.0; self.dim];
        a.mul_add(phi, &b, &mut out);
        Ok(FlowVector::new(out))
    }

    /// `yᵀ ∂_θG` at flows `φ`, i.e. for each parameter `j`
    /// `Σ_r y_r [(∂A/∂θ_j) φ + ∂b/∂θ_j]_r`.
    pub fn adjoint_param_product(&self, y: &[f64], phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.param_dim];
        for (k, row, col) in self.pattern.entries() {
            let weight = y[row] * phi[col];
            for (j, a) in self.a.terms(k) {
                out[j] += a * weight;
            }
        }
        for row in 0..self.dim {
            for (j, a) in self.b.terms(row) {
                out[j] += a * y[row];
            }
        }
        out
    }

    /// The `d × p` matrix `∂_θG` at `φ`, column-major, for small systems.
    pub fn param_jacobian_dense(&self, phi: &[f64]) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.param_dim);
        for s in self.eval_da() {
            m[(s.row, s.param)] += s.coef * phi[s.col];
        }
        for s in self.eval_db() {
            m[(s.row, s.param)] += s.coef;
        }
        m
    }

    /// Smallest entry of `A(θ)` and `b(θ)`; negative values violate the
    /// nonnegativity invariant.
    pub fn min_entry(&self, theta: &ParamVector) -> Result<f64> {
        let a = self.eval_a(theta)?;
        let b = self.b.eval(theta);
        Ok(a.values()
            .iter()
            .chain(&b)
            .fold(f64::INFINITY, |m, v| m.min(*v)))
    }
}

/// Thresholds for [`spectral_safety_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyConfig {
    pub kappa: f64,
    pub power_iterations: usize,
    pub power_tolerance: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            kappa: 1.0 - 1e-9,
            power_iterations: 200,
            power_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafetyRule {
    /// Every row sum (or every column sum) of `A` is at most κ.
    SubStochastic { max_sum: f64 },
    Acyclic,
    /// Power-iteration estimate of `ρ(A)` below one.
    Spectral { estimate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckResult {
    Pass(SafetyRule),
    Fail { estimate: f64 },
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        matches!(self, CheckResult::Pass(_))
    }
}

/// Certifies that flow cannot circulate indefinitely, i.e. `ρ(A(θ)) < 1`.
pub fn spectral_safety_check(
    system: &AffineFlowSystem,
    theta: &ParamVector,
    config: &SafetyConfig,
) -> Result<CheckResult> {
    let a = system.eval_a(theta)?;
    Ok(check_matrix(&a, system.acyclic_order().is_some(), config))
}

pub(crate) fn check_matrix(a: &CsrMatrix, acyclic: bool, config: &SafetyConfig) -> CheckResult {
    if acyclic {
        return CheckResult::Pass(SafetyRule::Acyclic);
    }
    let max = |v: Vec<f64>| v.into_iter().fold(0.0f64, f64::max);
    let max_sum = max(a.row_sums()).min(max(a.col_sums()));
    if max_sum <= config.kappa {
        return CheckResult::Pass(SafetyRule::SubStochastic { max_sum });
    }
    let estimate = power_iteration_radius(a, config);
    if estimate < 1.0 - config.power_tolerance {
        CheckResult::Pass(SafetyRule::Spectral { estimate })
    } else {
        CheckResult::Fail { estimate }
    }
}

/// Perron root estimate of a nonnegative matrix. Iterates on `A + I`, whose
/// dominant eigenvalue is `ρ(A) + 1` and which is aperiodic, so plain power
/// iteration converges even when `A` itself is periodic.
pub(crate) fn power_iteration_radius(a: &CsrMatrix, config: &SafetyConfig) -> f64 {
    let n = a.dim();
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut estimate = f64::NAN;
    for _ in 0..config.power_iterations {
        a.mul_add(&x, &x, &mut next);
        let scale = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let norm_x = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lambda = scale / norm_x - 1.0;
        next.iter_mut().for_each(|v| *v /= scale);
        std::mem::swap(&mut x, &mut next);
        let converged = (lambda - estimate).abs() <= config.power_tolerance;
        estimate = lambda;
        if converged {
            break;
        }
    }
    estimate
}
