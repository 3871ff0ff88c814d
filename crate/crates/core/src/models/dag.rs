//! Random forward-DAG Jackson networks for benchmarking.
//!
//! Stream layout (ChaCha8 seeded with `seed`, rand 0.9 sampling):
//! 1. partial Fisher-Yates over the candidates `0..d-2`: for `k in 0..p`,
//!    swap slot `k` with slot `random_range(k..d-2)`; the first `p` slots,
//!    sorted ascending, are the controlled nodes and parameter `k` belongs
//!    to the `k`-th of them;
//! 2. for every node `i in 0..d-2` ascending: the far target
//!    `random_range(i+2..d)`, then for uncontrolled nodes the split
//!    `random_range(0.2..0.8)` sent to `i+1`.
//!
//! Node `d-2` forwards everything to `d-1`, which departs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::jackson::{JacksonModel, Link};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagGenSpec {
    pub d: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_mu_slow")]
    pub mu_slow: f64,
    #[serde(default = "default_mu_fast")]
    pub mu_fast: f64,
}

fn default_lambda0() -> f64 {
    4.0
}
fn default_mu_slow() -> f64 {
    8.0
}
fn default_mu_fast() -> f64 {
    12.0
}

impl DagGenSpec {
    pub fn new(d: usize, p: usize, seed: u64) -> Self {
        DagGenSpec {
            d,
            p,
            seed,
            lambda0: default_lambda0(),
            mu_slow: default_mu_slow(),
            mu_fast: default_mu_fast(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidModel(format!("DAG needs d >= 2, got {}", self.d)));
        }
        if self.p > self.d - 2 {
            return Err(Error::InvalidModel(format!(
                "p = {} exceeds d - 2 = {}",
                self.p,
                self.d - 2
            )));
        }
        if !(self.lambda0 >= 0.0 && self.mu_slow > 0.0 && self.mu_fast > 0.0) {
            return Err(Error::InvalidModel("rates must be positive".into()));
        }
        Ok(())
    }
}

/// Every random choice made by [`generate_dag`], for replay and inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagRecord {
    pub seed: u64,
    pub controlled: Vec<usize>,
    /// Far target of node `i` for `i in 0..d-2`.
    pub far_targets: Vec<usize>,
    /// Probability to `i+1` for uncontrolled nodes, `None` for controlled ones.
    pub splits: Vec<Option<f64>>,
}

pub fn generate_dag(spec: &DagGenSpec) -> Result<(JacksonModel, DagRecord)> {
    spec.validate()?;
    let d = spec.d;
    let branching = d - 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut slots: Vec<usize> = (0..branching).collect();
    for k in 0..spec.p {
        let pick = rng.random_range(k..branching);
        slots.swap(k, pick);
    }
    let mut controlled = slots[..spec.p].to_vec();
    controlled.sort_unstable();
    let mut param_of = vec![None; branching];
    for (k, &node) in controlled.iter().enumerate() {
        param_of[node] = Some(k);
    }

    let mut links = Vec::with_capacity(2 * d);
    let mut far_targets = Vec::with_capacity(branching);
    let mut splits = Vec::with_capacity(branching);
    for i in 0..branching {
        let far = rng.random_range(i + 2..d);
        far_targets.push(far);
        match param_of[i] {
            Some(k) => {
                links.extend(Link::controlled_pair(i, k, far, i + 1));
                splits.push(None);
            }
            None => {
                let x = rng.random_range(0.2..0.8);
                links.push(Link::fixed(i, i + 1, x));
                links.push(Link::fixed(i, far, 1.0 - x));
                splits.push(Some(x));
            }
        }
    }
    links.push(Link::fixed(d - 2, d - 1, 1.0));
    links.push(Link::fixed(d - 1, None, 1.0));

    let mut lambda_ext = vec![0.0; d];
    lambda_ext[0] = spec.lambda0;
    let model = JacksonModel {
        d,
        p: spec.p,
        mu: (0..d)
            .map(|i| if i % 2 == 0 { spec.mu_slow } else { spec.mu_fast })
            .collect(),
        lambda_ext,
        links,
        weights: None,
        param_offsets: None,
    };
    let record = DagRecord {
        seed: spec.seed,
        controlled,
        far_targets,
        splits,
    };
    Ok((model, record))
}
