//! Per-queue product-form metrics from the loads `ρ_i = φ_i/μ_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueMetrics {
    pub utilization: f64,
    pub mean_length: f64,
}

impl QueueMetrics {
    /// Stationary probability of `n` jobs, `(1 − ρ)ρⁿ`.
    pub fn marginal(&self, n: u32) -> f64 {
        (1.0 - self.utilization) * self.utilization.powi(n as i32)
    }

    /// `P(N ≥ n) = ρⁿ`.
    pub fn tail(&self, n: u32) -> f64 {
        self.utilization.powi(n as i32)
    }
}

pub fn queue_metrics(rho: &[f64]) -> Result<Vec<QueueMetrics>> {
    rho.iter()
        .enumerate()
        .map(|(i, &r)| {
            if !(r >= 0.0) {
                return Err(Error::InvalidModel(format!("load of queue {i} is negative")));
            }
            if r >= 1.0 {
                return Err(Error::UnstableOperatingPoint {
                    queue: i,
                    flow: r,
                    capacity: 1.0,
                });
            }
            Ok(QueueMetrics {
                utilization: r,
                mean_length: r / (1.0 - r),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::objective_value;
    use crate::models::jackson::JacksonModel;
    use crate::solvers::SolverConfig;
    use proptest::prelude::*;

    #[test]
    fn reference_loads() {
        let m = queue_metrics(&[2.0 / 3.0, 0.0]).unwrap();
        assert!((m[0].mean_length - 2.0).abs() < 1e-15);
        assert_eq!(m[1].mean_length, 0.0);
        assert_eq!(m[1].marginal(0), 1.0);
        assert_eq!(m[1].marginal(3), 0.0);
        assert!(matches!(queue_metrics(&[1.0]), Err(Error::UnstableOperatingPoint { queue: 0, .. })));
    }

    #[test]
    fn scenario_optimum_mean_lengths() {
        let model = JacksonModel::three_queue([6.0, 5.0, 7.0]);
        let pb = model.build().unwrap();
        let (j, flows) = objective_value(&pb, &[0.3313, 0.0].into(), &SolverConfig::default()).unwrap();
        let rho: Vec<f64> = flows.iter().zip(&model.mu).map(|(f, m)| f / m).collect();
        let total: f64 = queue_metrics(&rho).unwrap().iter().map(|m| m.mean_length).sum();
        assert!((total - j).abs() < 1e-12);
        assert!((total - 2.979).abs() < 5e-3);
    }

    proptest! {
        #[test]
        fn marginal_normalizes(rho in 0.0..0.99f64) {
            let m = queue_metrics(&[rho]).unwrap()[0];
            // Partial sums plus the closed-form tail give exactly one.
            let n = 200;
            let partial: f64 = (0..n).map(|k| m.marginal(k)).sum();
            prop_assert!((partial + m.tail(n) - 1.0).abs() <= 1e-12);
            prop_assert!(partial <= 1.0 + 1e-12);
            let mean: f64 = (0..5000).map(|k| k as f64 * m.marginal(k)).sum();
            prop_assert!((mean - m.mean_length).abs() <= 1e-6 * m.mean_length.max(1.0));
        }
    }
}
