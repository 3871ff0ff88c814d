//! Energy Packet Networks with fixed data routing and controlled energy
//! arrival rates `α_i = θ_i` under a global budget.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::objective::{LocalPartials, Objective};
use crate::problem::Problem;
use crate::system::AffineFlowSystem;
use crate::types::FeasibleSet;

/// Relative margin `μ_iβ_i > φ_i(1 + STABILITY_MARGIN)` required at every node.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpnModel {
    pub n: usize,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda_ext: Vec<f64>,
    /// Row-major `n × n` routing matrix, `routing[i][j] = P_ij`.
    pub routing: Vec<Vec<f64>>,
    pub budget: f64,
    #[serde(default = "one")]
    pub w1: f64,
    #[serde(default = "one")]
    pub w2: f64,
}

fn one() -> f64 {
    1.0
}

impl EpnModel {
    /// The five-node network with two routing cycles and budget 25.
    pub fn five_node() -> Self {
        let mut routing = vec![vec![0.0; 5]; 5];
        for (i, j, p) in [
            (0, 1, 0.6),
            (1, 2, 0.5),
            (1, 3, 0.3),
            (2, 0, 0.2),
            (2, 4, 0.5),
            (3, 4, 0.7),
            (4, 2, 0.4),
        ] {
            routing[i][j] = p;
        }
        EpnModel {
            n: 5,
            mu: vec![10.0, 10.0, 5.0, 5.0, 5.0],
            gamma: vec![1.0; 5],
            lambda_ext: vec![2.0, 1.0, 0.5, 0.5, 1.0],
            routing,
            budget: 25.0,
            w1: 1.0,
            w2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        check_dim("mu", self.n, self.mu.len())?;
        check_dim("gamma", self.n, self.gamma.len())?;
        check_dim("lambda_ext", self.n, self.lambda_ext.len())?;
        check_dim("routing rows", self.n, self.routing.len())?;
        for row in &self.routing {
            check_dim("routing columns", self.n, row.len())?;
        }
        if let Some(i) = self.mu.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return invalid(format!("EP service rate of node {i} must be positive"));
        }
        if let Some(i) = self.gamma.iter().position(|g| !(*g >= 0.0 && g.is_finite())) {
            return invalid(format!("leakage rate of node {i} must be nonnegative"));
        }
        if let Some(i) = self.lambda_ext.iter().position(|l| !(*l >= 0.0 && l.is_finite())) {
            return invalid(format!("external rate of node {i} must be nonnegative"));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return invalid("budget must be positive".into());
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return invalid("weights must be nonnegative".into());
        }
        for (i, row) in self.routing.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return invalid(format!("routing row {i} has an entry outside [0, 1]"));
            }
            let total: f64 = row.iter().sum();
            if total > 1.0 + 1e-12 {
                return invalid(format!("routing row {i} sums to {total}"));
            }
        }
        self.check_open()
    }

    fn check_open(&self) -> Result<()> {
        let mut open: Vec<bool> = self
            .routing
            .iter()
            .map(|row| 1.0 - row.iter().sum::<f64>() > 1e-12)
            .collect();
        loop {
            let mut changed = false;
            for i in 0..self.n {
                if !open[i] && (0..self.n).any(|j| self.routing[i][j] > 0.0 && open[j]) {
                    open[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        match open.iter().position(|o| !o) {
            Some(node) => Err(Error::NotOpen { node }),
            None => Ok(()),
        }
    }

    /// `φ = Pᵀφ + λ_ext`, with no dependence on `θ`.
    pub fn flow_system(&self) -> Result<AffineFlowSystem> {
        self.validate()?;
        let mut builder = AffineFlowSystem::builder(self.n, self.n);
        for (i, row) in self.routing.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p != 0.0 {
                    builder.add_entry(j, i, p, &[])?;
                }
            }
        }
        for (i, &l) in self.lambda_ext.iter().enumerate() {
            if l != 0.0 {
                builder.add_input(i, l, &[])?;
            }
        }
        Ok(builder.build())
    }

    pub fn objective(&self) -> EnergyDelay {
        EnergyDelay {
            mu: self.mu.clone(),
            gamma: self.gamma.clone(),
            w1: self.w1,
            w2: self.w2,
            index: (0..self.n).collect(),
        }
    }

    pub fn build(&self) -> Result<Problem> {
        let system = self.flow_system()?;
        Problem::new(
            system,
            Arc::new(self.objective()),
            FeasibleSet::budget_simplex(self.n, self.budget)?,
        )
    }
}

/// `J = w₁ Σ φ_i/(μ_iβ_i − φ_i) + w₂ Σ γ_iβ_i` with `β_i = θ_i/(γ_i + μ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDelay {
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub w1: f64,
    pub w2: f64,
    index: Vec<usize>,
}

impl EnergyDelay {
    pub fn beta(&self, i: usize, theta: &[f64]) -> f64 {
        theta[i] / (self.gamma[i] + self.mu[i])
    }

    /// `(μ_iβ_i, μ_iβ_i − φ_i)`, rejecting saturated nodes.
    fn capacity(&self, i: usize, flow: f64, theta: &[f64]) -> Result<(f64, f64)> {
        let capacity = self.mu[i] * self.beta(i, theta);
        if capacity > flow * (1.0 + STABILITY_MARGIN) && capacity > 0.0 {
            Ok((capacity, capacity - flow))
        } else {
            Err(Error::UnstableOperatingPoint {
                queue: i,
                flow,
                capacity,
            })
        }
    }

    /// Mean data-packet backlog `D_i` at node `i`.
    pub fn delay(&self, i: usize, flow: f64, theta: &[f64]) -> Result<f64> {
        let (_, slack) = self.capacity(i, flow, theta)?;
        Ok(flow / slack)
    }

    /// Leakage term `γ_iβ_i`.
    pub fn leakage(&self, i: usize, theta: &[f64]) -> f64 {
        self.gamma[i] * self.beta(i, theta)
    }

    /// `(D, L)` summed over nodes.
    pub fn delay_and_leakage(&self, flows: &[f64], theta: &[f64]) -> Result<(f64, f64)> {
        let mut d = 0.0;
        let mut l = 0.0;
        for (i, &phi) in flows.iter().enumerate() {
            d += self.delay(i, phi, theta)?;
            l += self.leakage(i, theta);
        }
        Ok((d, l))
    }

    /// `∂F/∂β_i = w₁(−μ_iφ_i/(μ_iβ_i − φ_i)²) + w₂γ_i`.
    pub fn partial_beta(&self, i: usize, flow: f64, theta: &[f64]) -> Result<f64> {
        let mut v = self.w2 * self.gamma[i];
        if self.w1 != 0.0 {
            let (_, s) = self.capacity(i, flow, theta)?;
            v -= self.w1 * self.mu[i] * flow / (s * s);
        }
        Ok(v)
    }
}

impl Objective for EnergyDelay {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn param_dim(&self) -> usize {
        self.mu.len()
    }

    fn weight(&self, _queue: usize) -> f64 {
        1.0
    }

    fn local_reward(&self, queue: usize, flow: f64, theta: &[f64]) -> Result<f64> {
        let mut r = self.w2 * self.leakage(queue, theta);
        if self.w1 != 0.0 {
            r += self.w1 * self.delay(queue, flow, theta)?;
        }
        Ok(r)
    }

    fn reward_params(&self, queue: usize) -> &[usize] {
        std::slice::from_ref(&self.index[queue])
    }

    fn local_partials(&self, queue: usize, flow: f64, theta: &[f64]) -> Result<LocalPartials> {
        let d_flow = if self.w1 != 0.0 {
            let (c, s) = self.capacity(queue, flow, theta)?;
            self.w1 * c / (s * s)
        } else {
            0.0
        };
        let chain = 1.0 / (self.gamma[queue] + self.mu[queue]);
        Ok(LocalPartials {
            d_flow,
            d_params: vec![(queue, self.partial_beta(queue, flow, theta)? * chain)],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::{compute_gradient, objective_value, GradientConfig, GradientEngine};
    use crate::solvers::{solve_flows, SolverConfig};
    use crate::types::ParamVector;

    fn start() -> ParamVector {
        ParamVector::from([5.0; 5])
    }

    /// φ from an independent 5×5 Gauss-Jordan solve of (I − Pᵀ)φ = λ.
    fn oracle_flows(m: &EpnModel) -> Vec<f64> {
        let n = m.n;
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = if i == j { 1.0 } else { 0.0 } - m.routing[j][i];
            }
            a[i][n] = m.lambda_ext[i];
        }
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            let d = a[c][c];
            a[c].iter_mut().for_each(|v| *v /= d);
            for r in 0..n {
                if r != c {
                    let f = a[r][c];
                    let pivot_row = a[c].clone();
                    a[r].iter_mut().zip(pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        a.iter().map(|row| row[n]).collect()
    }

    #[test]
    fn flows_and_effective_rates() {
        let m = EpnModel::five_node();
        let pb = m.build().unwrap();
        let r = solve_flows(&pb.system, &start(), &SolverConfig::default()).unwrap();
        let oracle = oracle_flows(&m);
        for (i, (a, b)) in r.flows.iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() < 1e-10);
            assert!((a - [2.64, 2.58, 3.19, 1.27, 3.48][i]).abs() < 1e-2);
        }
        let obj = m.objective();
        for (i, b) in [0.4545, 0.4545, 0.8333, 0.8333, 0.8333].iter().enumerate() {
            assert!((obj.beta(i, &start()) - b).abs() < 1e-4);
        }
    }

    #[test]
    fn initial_cost_split() {
        let m = EpnModel::five_node();
        let pb = m.build().unwrap();
        let (j, flows) = objective_value(&pb, &start(), &SolverConfig::default()).unwrap();
        let (d, l) = m.objective().delay_and_leakage(&flows, &start()).unwrap();
        assert!((d - 11.49).abs() < 5e-2);
        assert!((l - 3.41).abs() < 5e-2);
        assert!((j - 14.90).abs() < 5e-2);
        assert!((j - d - l).abs() < 1e-12);
    }

    #[test]
    fn beta_partials_signs_and_values() {
        let m = EpnModel::five_node();
        let obj = m.objective();
        let phi = oracle_flows(&m);
        let theta = start();
        let exact: Vec<f64> = (0..5).map(|i| obj.partial_beta(i, phi[i], &theta).unwrap()).collect();
        // Closed form from the oracle flows.
        for i in 0..5 {
            let c = m.mu[i] * theta[i] / (m.mu[i] + 1.0);
            let want = -m.mu[i] * phi[i] / (c - phi[i]).powi(2) + 1.0;
            assert!((exact[i] - want).abs() < 1e-12);
        }
        assert!(exact[3] > 0.0);
        assert!(exact.iter().enumerate().all(|(i, v)| i == 3 || *v < 0.0));
        // The published figures are reproduced from flows rounded to two decimals.
        let rounded = [2.64, 2.58, 3.19, 1.27, 3.48];
        for (i, want) in [-6.27, -5.68, -15.72, 0.24, -35.90].iter().enumerate() {
            assert!((obj.partial_beta(i, rounded[i], &theta).unwrap() - want).abs() < 1e-2);
        }
    }

    #[test]
    fn flows_do_not_depend_on_theta() {
        let pb = EpnModel::five_node().build().unwrap();
        let cfg = SolverConfig::default();
        let base = solve_flows(&pb.system, &start(), &cfg).unwrap().flows;
        for theta in [[1.0, 2.0, 3.0, 4.0, 5.0], [0.0; 5], [25.0, 0.0, 0.0, 0.0, 0.0]] {
            let f = solve_flows(&pb.system, &theta.into(), &cfg).unwrap().flows;
            assert_eq!(f.as_slice(), base.as_slice());
        }
    }

    #[test]
    fn engines_agree_on_gradient() {
        let pb = EpnModel::five_node().build().unwrap();
        let analytic = compute_gradient(&pb, &start(), &GradientConfig::default()).unwrap();
        for engine in [GradientEngine::NumericJacobian, GradientEngine::FiniteDifferenceJ] {
            let other = compute_gradient(&pb, &start(), &GradientConfig::with_engine(engine)).unwrap();
            for (a, b) in analytic.gradient.iter().zip(&other.gradient) {
                assert!((a - b).abs() < 1e-4 * a.abs().max(1.0), "{engine:?}");
            }
        }
        // ∂J/∂θ_i = (∂F/∂β_i)/(μ_i + 1).
        let m = EpnModel::five_node();
        let obj = m.objective();
        for i in 0..5 {
            let want = obj.partial_beta(i, analytic.flows[i], &start()).unwrap() / (m.mu[i] + 1.0);
            assert!((analytic.gradient[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn leakage_only_gradient_is_constant() {
        let mut m = EpnModel::five_node();
        m.w1 = 0.0;
        let pb = m.build().unwrap();
        for theta in [start(), ParamVector::from([0.0, 1.0, 2.0, 0.0, 9.0])] {
            let g = compute_gradient(&pb, &theta, &GradientConfig::default()).unwrap();
            for i in 0..5 {
                assert!((g.gradient[i] - 1.0 / (1.0 + m.mu[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn starved_node_is_unstable() {
        let pb = EpnModel::five_node().build().unwrap();
        let err = objective_value(&pb, &[5.0, 5.0, 5.0, 1.0, 5.0].into(), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnstableOperatingPoint { queue: 3, .. }));
    }

    #[test]
    fn trapped_routing_is_not_open() {
        let mut m = EpnModel::five_node();
        m.routing[3] = vec![0.0, 0.0, 0.0, 0.0, 1.0];
        m.routing[4] = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(m.validate().unwrap_err(), Error::NotOpen { node: 3 });
    }
}
