//! Continuous-time Markov chain simulation of Jackson networks, used as an
//! independent check of the product-form metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{check_dim, Error, Result};
use crate::models::jackson::{JacksonModel, LinkKind};
use crate::par;
use crate::solvers::{solve_flows, SolverConfig};
use crate::types::ParamVector;

/// Occupancy histograms track `0..HISTOGRAM_BINS - 1` exactly; the last bin
/// collects everything above.
pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 2e5,
            warmup: 2e4,
            seed: 0,
            replications: 10,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.warmup >= 0.0 && self.horizon > self.warmup && self.horizon.is_finite() && self.replications >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "simulation needs horizon > warmup >= 0 and replications >= 1, got {self:?}"
            )))
        }
    }
}

/// Across-replication mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std_error = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Estimate { mean, std_error }
    }

    /// `|mean − target| ≤ k·SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_lengths: Vec<Estimate>,
    pub total_mean_length: Estimate,
    pub throughputs: Vec<Estimate>,
    /// `occupancy[i][n]`: fraction of time queue `i` held `n` jobs.
    pub occupancy: Vec<Vec<Estimate>>,
    pub replications: usize,
    pub events: u64,
}

struct Replication {
    mean_lengths: Vec<f64>,
    throughputs: Vec<f64>,
    occupancy: Vec<Vec<f64>>,
    events: u64,
}

/// Cumulative routing table of node `i`: `(threshold, destination)`.
type Routes = Vec<(f64, Option<usize>)>;

fn routing_tables(model: &JacksonModel, theta: &[f64]) -> Vec<Routes> {
    let offsets = model.offsets();
    let mut probs: Vec<Vec<(f64, Option<usize>)>> = vec![Vec::new(); model.d];
    for link in &model.links {
        let p = match link.kind {
            LinkKind::Fixed => link.value_or_param,
            LinkKind::Controlled => {
                let j = link.value_or_param as usize;
                offsets[j] + theta[j]
            }
            LinkKind::Complement => {
                let j = link.value_or_param as usize;
                1.0 - offsets[j] - theta[j]
            }
        };
        if p > 0.0 {
            probs[link.from].push((p, link.to));
        }
    }
    probs
        .into_iter()
        .map(|row| {
            let mut acc = 0.0;
            row.into_iter()
                .map(|(p, to)| {
                    acc += p;
                    (acc, to)
                })
                .collect()
        })
        .collect()
}

/// Index whose rate interval contains `u`; rounding past the end falls on
/// the last positive rate.
fn pick(rates: impl Iterator<Item = (usize, f64)>, mut u: f64) -> usize {
    let mut last = 0;
    for (i, r) in rates {
        if r > 0.0 {
            last = i;
            if u < r {
                return i;
            }
            u -= r;
        }
    }
    last
}

fn run_replication(model: &JacksonModel, routes: &[Routes], cfg: &SimConfig, stream: u64) -> Replication {
    let d = model.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let arrival_rate: f64 = model.lambda_ext.iter().sum();

    let mut n = vec![0usize; d];
    let mut area = vec![0.0; d];
    let mut completions = vec![0u64; d];
    let mut occupancy = vec![vec![0.0; HISTOGRAM_BINS]; d];
    let mut t = 0.0_f64;
    let mut events = 0u64;

    loop {
        let busy_rate: f64 = (0..d).filter(|&k| n[k] > 0).map(|k| model.mu[k]).sum();
        let total = arrival_rate + busy_rate;
        let next = if total > 0.0 {
            let e: f64 = Exp1.sample(&mut rng);
            t + e / total
        } else {
            f64::INFINITY
        };
        // Accumulate the holding time that falls after warmup.
        let from = t.max(cfg.warmup);
        let to = next.min(cfg.horizon);
        if to > from {
            let dt = to - from;
            for i in 0..d {
                area[i] += n[i] as f64 * dt;
                occupancy[i][n[i].min(HISTOGRAM_BINS - 1)] += dt;
            }
        }
        if next >= cfg.horizon {
            break;
        }
        t = next;
        events += 1;

        let u = rng.random::<f64>() * total;
        if u < arrival_rate {
            let i = pick(model.lambda_ext.iter().copied().enumerate(), u);
            n[i] += 1;
            continue;
        }
        let busy = (0..d).filter(|&k| n[k] > 0).map(|k| (k, model.mu[k]));
        let i = pick(busy, u - arrival_rate);
        n[i] -= 1;
        if t >= cfg.warmup {
            completions[i] += 1;
        }
        let r = rng.random::<f64>();
        if let Some(&(_, Some(j))) = routes[i].iter().find(|(c, _)| r < *c) {
            n[j] += 1;
        }
    }

    let window = cfg.horizon - cfg.warmup;
    Replication {
        mean_lengths: area.iter().map(|a| a / window).collect(),
        throughputs: completions.iter().map(|&c| c as f64 / window).collect(),
        occupancy: occupancy
            .into_iter()
            .map(|h| h.into_iter().map(|x| x / window).collect())
            .collect(),
        events,
    }
}

/// Simulates `model` at `theta` for `config.replications` independent
/// replications. Replication `r` uses ChaCha8 stream `r` of `config.seed`.
pub fn simulate_jackson(model: &JacksonModel, theta: &ParamVector, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    model.validate()?;
    check_dim("theta", model.p, theta.len())?;
    let feasible = model.feasible_set()?;
    if !feasible.contains(theta, 1e-12) {
        return Err(Error::InvalidConfig("theta lies outside the routing box".into()));
    }
    let system = model.flow_system()?;
    let flows = solve_flows(&system, theta, &SolverConfig::default())?.flows;
    for (i, (&f, &m)) in flows.iter().zip(&model.mu).enumerate() {
        if f >= m {
            return Err(Error::UnstableOperatingPoint {
                queue: i,
                flow: f,
                capacity: m,
            });
        }
    }

    let routes = routing_tables(model, theta);
    let reps = par::map_range(config.replications, |r| run_replication(model, &routes, config, r as u64));

    let d = model.d;
    let column = |f: &dyn Fn(&Replication) -> f64| -> Estimate {
        Estimate::from_samples(&reps.iter().map(f).collect::<Vec<_>>())
    };
    Ok(SimResult {
        mean_lengths: (0..d).map(|i| column(&|r| r.mean_lengths[i])).collect(),
        total_mean_length: column(&|r| r.mean_lengths.iter().sum()),
        throughputs: (0..d).map(|i| column(&|r| r.throughputs[i])).collect(),
        occupancy: (0..d)
            .map(|i| (0..HISTOGRAM_BINS).map(|k| column(&|r| r.occupancy[i][k])).collect())
            .collect(),
        replications: config.replications,
        events: reps.iter().map(|r| r.events).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub queue: usize,
    /// Largest `|t|` statistic over the tested bins.
    pub max_t: f64,
    pub critical: f64,
    pub passed: bool,
}

/// Compares each queue's occupancy histogram with the geometric law
/// `(1 − ρ_i)ρ_iⁿ` on bins `0..bins` using per-bin t-tests across
/// replications, Bonferroni-corrected over all queues and bins at
/// family-wise level `alpha`.
pub fn geometric_fit(result: &SimResult, rho: &[f64], bins: usize, alpha: f64) -> Result<Vec<FitReport>> {
    check_dim("loads", result.occupancy.len(), rho.len())?;
    if result.replications < 2 || bins == 0 || bins >= HISTOGRAM_BINS || !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidConfig(
            "goodness of fit needs >= 2 replications, 0 < bins < HISTOGRAM_BINS and 0 < alpha < 1".into(),
        ));
    }
    let tests = (rho.len() * bins) as f64;
    let dist = StudentsT::new(0.0, 1.0, (result.replications - 1) as f64)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let critical = dist.inverse_cdf(1.0 - alpha / (2.0 * tests));
    Ok(rho
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let max_t = (0..bins)
                .map(|n| {
                    let e = result.occupancy[i][n];
                    let expected = (1.0 - r) * r.powi(n as i32);
                    let gap = (e.mean - expected).abs();
                    if e.std_error > 0.0 {
                        gap / e.std_error
                    } else if gap <= 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            FitReport {
                queue: i,
                max_t,
                critical,
                passed: max_t <= critical,
            }
        })
        .collect())
}
