//! Open Jackson networks with routing probabilities controlled in pairs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::objective::MeanQueueLength;
use crate::problem::Problem;
use crate::system::AffineFlowSystem;
use crate::types::FeasibleSet;

/// Probabilities may overshoot 1 by this much through rounding.
const PROB_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// `value_or_param` is the routing probability.
    Fixed,
    /// Probability `offset_j + θ_j` with `j = value_or_param`.
    Controlled,
    /// Probability `1 − offset_j − θ_j`, the other arm of `Controlled`.
    Complement,
}

/// A routing arc `from → to`; `to = None` routes out of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: Option<usize>,
    pub kind: LinkKind,
    pub value_or_param: f64,
}

impl Link {
    pub fn fixed(from: usize, to: impl Into<Option<usize>>, prob: f64) -> Self {
        Link {
            from,
            to: to.into(),
            kind: LinkKind::Fixed,
            value_or_param: prob,
        }
    }

    /// The pair `from → to` (probability `θ_j`) and `from → other` (`1 − θ_j`).
    pub fn controlled_pair(
        from: usize,
        param: usize,
        to: impl Into<Option<usize>>,
        other: impl Into<Option<usize>>,
    ) -> [Self; 2] {
        [
            Link {
                from,
                to: to.into(),
                kind: LinkKind::Controlled,
                value_or_param: param as f64,
            },
            Link {
                from,
                to: other.into(),
                kind: LinkKind::Complement,
                value_or_param: param as f64,
            },
        ]
    }

    fn param(&self, p: usize) -> Result<usize> {
        let v = self.value_or_param;
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < p {
            Ok(v as usize)
        } else {
            Err(Error::InvalidModel(format!(
                "link {}->{:?}: parameter index {v} is not an integer below p = {p}",
                self.from, self.to
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacksonModel {
    pub d: usize,
    pub p: usize,
    pub mu: Vec<f64>,
    pub lambda_ext: Vec<f64>,
    pub links: Vec<Link>,
    /// Objective weights; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Affine offsets `p₀` of the controlled probabilities; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_offsets: Option<Vec<f64>>,
}

/// Where parameter `j` lives: branching node and the two arm targets.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Pair {
    node: usize,
    controlled: Option<usize>,
    complement: Option<usize>,
}

impl JacksonModel {
    /// The three-queue network where node 0 splits to 1 / 2 with `θ₀`
    /// and node 1 forwards to 2 with `θ₁`, external rate 4 at node 0.
    pub fn three_queue(mu: [f64; 3]) -> Self {
        let mut links = Vec::new();
        links.extend(Link::controlled_pair(0, 0, 1, 2));
        links.extend(Link::controlled_pair(1, 1, 2, None));
        links.push(Link::fixed(2, None, 1.0));
        JacksonModel {
            d: 3,
            p: 2,
            mu: mu.to_vec(),
            lambda_ext: vec![4.0, 0.0, 0.0],
            links,
            weights: None,
            param_offsets: None,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.d])
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.param_offsets.clone().unwrap_or_else(|| vec![0.0; self.p])
    }

    /// `θ` ranges over the box keeping every controlled probability in [0, 1].
    pub fn feasible_set(&self) -> Result<FeasibleSet> {
        let offsets = self.offsets();
        FeasibleSet::boxed(
            offsets.iter().map(|o| 0.0 - o).collect(),
            offsets.iter().map(|o| 1.0 - o).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        check_dim("mu", self.d, self.mu.len())?;
        check_dim("lambda_ext", self.d, self.lambda_ext.len())?;
        if let Some(w) = &self.weights {
            check_dim("weights", self.d, w.len())?;
        }
        let offsets = self.offsets();
        check_dim("param_offsets", self.p, offsets.len())?;
        if let Some(i) = self.mu.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return invalid(format!("service rate of queue {i} must be positive"));
        }
        if let Some(i) = self.lambda_ext.iter().position(|l| !(*l >= 0.0 && l.is_finite())) {
            return invalid(format!("external rate of queue {i} must be nonnegative"));
        }
        if let Some(j) = offsets.iter().position(|o| !(0.0..=1.0).contains(o)) {
            return invalid(format!("offset of parameter {j} must lie in [0, 1]"));
        }

        let mut out_mass = vec![0.0; self.d];
        for link in &self.links {
            if link.from >= self.d || link.to.is_some_and(|t| t >= self.d) {
                return invalid(format!("link {}->{:?} references a missing queue", link.from, link.to));
            }
            if link.kind == LinkKind::Fixed {
                let prob = link.value_or_param;
                if !(0.0..=1.0).contains(&prob) {
                    return invalid(format!("link {}->{:?}: probability {prob} outside [0, 1]", link.from, link.to));
                }
                out_mass[link.from] += prob;
            }
        }
        for pair in self.pairs()? {
            out_mass[pair.node] += 1.0;
        }
        if let Some(i) = out_mass.iter().position(|m| *m > 1.0 + PROB_SLACK) {
            return invalid(format!("outgoing probabilities of queue {i} sum to {}", out_mass[i]));
        }
        self.check_open()
    }

    fn pairs(&self) -> Result<Vec<Pair>> {
        let mut controlled: Vec<Option<(usize, Option<usize>)>> = vec![None; self.p];
        let mut complement: Vec<Option<(usize, Option<usize>)>> = vec![None; self.p];
        for link in &self.links {
            let slot = match link.kind {
                LinkKind::Fixed => continue,
                LinkKind::Controlled => &mut controlled,
                LinkKind::Complement => &mut complement,
            };
            let j = link.param(self.p)?;
            if slot[j].replace((link.from, link.to)).is_some() {
                return Err(Error::InvalidModel(format!("parameter {j} has duplicate {:?} links", link.kind)));
            }
        }
        (0..self.p)
            .map(|j| match (controlled[j], complement[j]) {
                (Some((a, to)), Some((b, other))) if a == b => Ok(Pair {
                    node: a,
                    controlled: to,
                    complement: other,
                }),
                _ => Err(Error::InvalidModel(format!(
                    "parameter {j} needs one controlled and one complement link from the same queue"
                ))),
            })
            .collect()
    }

    /// Every queue must reach departure for every feasible `θ`. A queue is
    /// open when it has positive fixed exit mass, a positive fixed link to
    /// an open queue, or a controlled pair whose arms both lead out.
    fn check_open(&self) -> Result<()> {
        let pairs = self.pairs()?;
        let mut exit_mass = vec![1.0; self.d];
        for link in &self.links {
            if link.kind == LinkKind::Fixed {
                exit_mass[link.from] -= link.value_or_param;
            }
        }
        for pair in &pairs {
            exit_mass[pair.node] -= 1.0;
        }
        let mut open: Vec<bool> = exit_mass.iter().map(|m| *m > PROB_SLACK).collect();
        let leads_out = |open: &[bool], to: Option<usize>| to.is_none_or(|t| open[t]);
        loop {
            let mut changed = false;
            for link in &self.links {
                if link.kind == LinkKind::Fixed
                    && link.value_or_param > 0.0
                    && !open[link.from]
                    && leads_out(&open, link.to)
                {
                    open[link.from] = true;
                    changed = true;
                }
            }
            for pair in &pairs {
                if !open[pair.node] && leads_out(&open, pair.controlled) && leads_out(&open, pair.complement) {
                    open[pair.node] = true;
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

    /// `A(θ) = P(θ)ᵀ`, `b = λ_ext`.
    pub fn flow_system(&self) -> Result<AffineFlowSystem> {
        self.validate()?;
        let offsets = self.offsets();
        let mut builder = AffineFlowSystem::builder(self.d, self.p);
        for link in &self.links {
            let Some(to) = link.to else { continue };
            match link.kind {
                LinkKind::Fixed => {
                    if link.value_or_param != 0.0 {
                        builder.add_entry(to, link.from, link.value_or_param, &[])?;
                    }
                }
                LinkKind::Controlled => {
                    let j = link.param(self.p)?;
                    builder.add_entry(to, link.from, offsets[j], &[(j, 1.0)])?;
                }
                LinkKind::Complement => {
                    let j = link.param(self.p)?;
                    builder.add_entry(to, link.from, 1.0 - offsets[j], &[(j, -1.0)])?;
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

    /// Flow system, mean-queue-length objective and the routing box.
    pub fn build(&self) -> Result<Problem> {
        let system = self.flow_system()?;
        let objective = MeanQueueLength::new(self.mu.clone(), self.weights(), self.p)?;
        Problem::new(system, Arc::new(objective), self.feasible_set()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::{compute_gradient, objective_value, GradientConfig};
    use crate::solvers::{solve_flows, SolverConfig};
    use crate::system::{spectral_safety_check, CheckResult, SafetyConfig, SafetyRule};
    use crate::types::ParamVector;
    use proptest::prelude::*;

    #[test]
    fn three_queue_reference_point() {
        let pb = JacksonModel::three_queue([6.0, 5.0, 7.0]).build().unwrap();
        let theta = ParamVector::from([0.8, 0.8]);
        let (j, flows) = objective_value(&pb, &theta, &SolverConfig::default()).unwrap();
        for (a, b) in flows.iter().zip([4.0, 3.2, 3.36]) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!((j - 4.70).abs() < 5e-3);
        let (dphi, _) = pb.objective.partials(&flows, &theta).unwrap();
        for (a, b) in dphi.iter().zip([1.50, 1.54, 0.53]) {
            assert!((a - b).abs() < 1e-2);
        }
        let g = compute_gradient(&pb, &theta, &GradientConfig::default()).unwrap();
        assert!((g.gradient[0] - 5.75).abs() < 1e-2 && (g.gradient[1] - 1.69).abs() < 1e-2);
    }

    #[test]
    fn zero_routing_closed_form() {
        let pb = JacksonModel::three_queue([6.0, 5.0, 7.0]).build().unwrap();
        let (j, flows) = objective_value(&pb, &[0.0, 0.0].into(), &SolverConfig::default()).unwrap();
        assert_eq!(flows.as_slice(), &[4.0, 0.0, 4.0]);
        assert!((j - (4.0 / 2.0 + 4.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn acyclic_pass() {
        let pb = JacksonModel::three_queue([6.0, 5.0, 7.0]).build().unwrap();
        let r = spectral_safety_check(&pb.system, &[0.3, 0.9].into(), &SafetyConfig::default()).unwrap();
        assert_eq!(r, CheckResult::Pass(SafetyRule::Acyclic));
    }

    #[test]
    fn closed_loop_is_not_open() {
        let mut m = JacksonModel::three_queue([6.0, 5.0, 7.0]);
        m.links.retain(|l| l.from != 2);
        m.links.push(Link::fixed(2, 0, 1.0));
        // 2 -> 0 -> {1, 2}, 1 -> {2, out}: the arm 0 -> 2 never leaves when θ₀ = 0, θ₁ = 1.
        assert_eq!(m.validate().unwrap_err(), Error::NotOpen { node: 0 });
    }

    #[test]
    fn malformed_models_rejected() {
        let mut m = JacksonModel::three_queue([6.0, 5.0, 7.0]);
        m.links.push(Link::fixed(0, 2, 0.5));
        assert!(matches!(m.validate(), Err(Error::InvalidModel(_))));

        let mut m = JacksonModel::three_queue([6.0, 5.0, 7.0]);
        m.links.remove(1);
        assert!(matches!(m.validate(), Err(Error::InvalidModel(_))));

        let mut m = JacksonModel::three_queue([6.0, 5.0, 7.0]);
        m.links[0].value_or_param = 1.5;
        assert!(matches!(m.validate(), Err(Error::InvalidModel(_))));

        let mut m = JacksonModel::three_queue([6.0, 5.0, 7.0]);
        m.mu.pop();
        assert!(matches!(m.validate(), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn offsets_shift_the_box() {
        let mut m = JacksonModel::three_queue([6.0, 5.0, 7.0]);
        m.param_offsets = Some(vec![0.25, 0.0]);
        let pb = m.build().unwrap();
        assert_eq!(
            pb.feasible,
            FeasibleSet::Box {
                lower: vec![-0.25, 0.0],
                upper: vec![0.75, 1.0]
            }
        );
        let r = solve_flows(&pb.system, &[0.55, 0.8].into(), &SolverConfig::default()).unwrap();
        assert!((r.flows[1] - 3.2).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let m = JacksonModel::three_queue([6.0, 5.0, 5.0]);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<JacksonModel>(&text).unwrap(), m);
    }

    proptest! {
        #[test]
        fn closed_form_flows(p in 0.0..=1.0f64, q in 0.0..=1.0f64) {
            let pb = JacksonModel::three_queue([6.0, 5.0, 7.0]).build().unwrap();
            let r = solve_flows(&pb.system, &[p, q].into(), &SolverConfig::default()).unwrap();
            prop_assert!((r.flows[0] - 4.0).abs() <= 1e-10);
            prop_assert!((r.flows[1] - 4.0 * p).abs() <= 1e-10);
            prop_assert!((r.flows[2] - 4.0 * (1.0 - p + q * p)).abs() <= 1e-10);
            prop_assert!((r.flows[1] + r.flows[2] - (4.0 + 4.0 * p * q)).abs() <= 1e-10);
        }
    }

    #[test]
    fn flows_nondecreasing_in_theta() {
        let pb = JacksonModel::three_queue([6.0, 5.0, 7.0]).build().unwrap();
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let flows = |p: f64, q: f64| solve_flows(&pb.system, &[p, q].into(), &SolverConfig::default()).unwrap().flows;
        for &p in &grid {
            for w in grid.windows(2) {
                let (a, b) = (flows(p, w[0]), flows(p, w[1]));
                assert!(a.iter().zip(b.iter()).all(|(x, y)| y >= x));
            }
        }
        // Λ₂ = 4p grows with p; Λ₃ = 4(1 − p + pq) only for q = 1.
        for w in grid.windows(2) {
            assert!(flows(w[1], 0.5)[1] >= flows(w[0], 0.5)[1]);
            assert!(flows(w[1], 1.0)[2] >= flows(w[0], 1.0)[2] - 1e-12);
        }
    }
}
