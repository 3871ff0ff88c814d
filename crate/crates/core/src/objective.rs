//! Separable steady-state objectives `F(φ, θ) = Σ_i w_i r_i(φ_i, θ)`.

use std::fmt::Debug;

use crate::error::{check_dim, Error, Result};
use crate::types::ParamVector;

/// Partial derivatives of one weighted local reward `w_i r_i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalPartials {
    pub d_flow: f64,
    /// `(j, ∂(w_i r_i)/∂θ_j)` for the parameters the reward depends on.
    pub d_params: Vec<(usize, f64)>,
}

pub trait Objective: Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    fn weight(&self, queue: usize) -> f64;

    /// `r_i(φ_i, θ)`; `UnstableOperatingPoint` outside the reward's domain.
    fn local_reward(&self, queue: usize, flow: f64, theta: &[f64]) -> Result<f64>;

    /// Parameters `r_i` depends on directly (empty when θ enters only
    /// through the flows).
    fn reward_params(&self, _queue: usize) -> &[usize] {
        &[]
    }

    fn depends_on_params(&self) -> bool {
        (0..self.dim()).any(|i| !self.reward_params(i).is_empty())
    }

    /// Analytic partials of `w_i r_i`. Objectives that cannot differentiate
    /// themselves return `MissingAnalyticJacobians`.
    fn local_partials(&self, _queue: usize, _flow: f64, _theta: &[f64]) -> Result<LocalPartials> {
        Err(Error::MissingAnalyticJacobians)
    }

    fn value(&self, flows: &[f64], theta: &ParamVector) -> Result<f64> {
        check_dim("objective flows", self.dim(), flows.len())?;
        check_dim("objective parameters", self.param_dim(), theta.len())?;
        let mut total = 0.0;
        for (i, &phi) in flows.iter().enumerate() {
            let w = self.weight(i);
            if w != 0.0 {
                total += w * self.local_reward(i, phi, theta)?;
            }
        }
        Ok(total)
    }

    /// `(∂_φF, ∂_θF)` assembled from the analytic local partials.
    fn partials(&self, flows: &[f64], theta: &ParamVector) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("objective flows", self.dim(), flows.len())?;
        check_dim("objective parameters", self.param_dim(), theta.len())?;
        let mut d_flow = vec![0.0; self.dim()];
        let mut d_theta = vec![0.0; self.param_dim()];
        for (i, &phi) in flows.iter().enumerate() {
            if self.weight(i) == 0.0 {
                continue;
            }
            let lp = self.local_partials(i, phi, theta)?;
            d_flow[i] = lp.d_flow;
            for (j, v) in lp.d_params {
                d_theta[j] += v;
            }
        }
        Ok((d_flow, d_theta))
    }
}

/// Total weighted mean queue length `Σ w_i φ_i/(μ_i − φ_i)` of M/M/1 stations.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanQueueLength {
    pub mu: Vec<f64>,
    pub weights: Vec<f64>,
    pub param_dim: usize,
}

impl MeanQueueLength {
    pub fn new(mu: Vec<f64>, weights: Vec<f64>, param_dim: usize) -> Result<Self> {
        check_dim("objective weights", mu.len(), weights.len())?;
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidModel("objective weights must be nonnegative".into()));
        }
        Ok(MeanQueueLength {
            mu,
            weights,
            param_dim,
        })
    }

    fn slack(&self, queue: usize, flow: f64) -> Result<f64> {
        let mu = self.mu[queue];
        if flow < mu {
            Ok(mu - flow)
        } else {
            Err(Error::UnstableOperatingPoint {
                queue,
                flow,
                capacity: mu,
            })
        }
    }
}

impl Objective for MeanQueueLength {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn weight(&self, queue: usize) -> f64 {
        self.weights[queue]
    }

    fn local_reward(&self, queue: usize, flow: f64, _theta: &[f64]) -> Result<f64> {
        Ok(flow / self.slack(queue, flow)?)
    }

    fn local_partials(&self, queue: usize, flow: f64, _theta: &[f64]) -> Result<LocalPartials> {
        let s = self.slack(queue, flow)?;
        Ok(LocalPartials {
            d_flow: self.weights[queue] * self.mu[queue] / (s * s),
            d_params: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_queue_length_value_and_partials() {
        let obj = MeanQueueLength::new(vec![6.0, 5.0, 7.0], vec![1.0; 3], 2).unwrap();
        let theta = ParamVector::from([0.8, 0.8]);
        let j = obj.value(&[4.0, 3.2, 3.36], &theta).unwrap();
        let expect = 4.0 / 2.0 + 3.2 / 1.8 + 3.36 / 3.64;
        assert!((j - expect).abs() < 1e-14);
        let (dphi, dtheta) = obj.partials(&[4.0, 3.2, 3.36], &theta).unwrap();
        assert!((dphi[0] - 1.5).abs() < 1e-14);
        assert!((dphi[1] - 1.5432).abs() < 1e-4);
        assert!((dphi[2] - 0.5283).abs() < 1e-4);
        assert_eq!(dtheta, vec![0.0, 0.0]);
        assert!(!obj.depends_on_params());
    }

    #[test]
    fn unstable_flow_is_an_error() {
        let obj = MeanQueueLength::new(vec![2.0], vec![1.0], 0).unwrap();
        assert_eq!(
            obj.value(&[2.0], &ParamVector::zeros(0)).unwrap_err(),
            Error::UnstableOperatingPoint {
                queue: 0,
                flow: 2.0,
                capacity: 2.0
            }
        );
    }

    #[test]
    fn zero_weight_skips_unstable_queue() {
        let obj = MeanQueueLength::new(vec![2.0, 5.0], vec![0.0, 1.0], 0).unwrap();
        assert_eq!(obj.value(&[3.0, 0.0], &ParamVector::zeros(0)).unwrap(), 0.0);
    }
}
