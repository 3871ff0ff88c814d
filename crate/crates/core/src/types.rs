use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl From<&[f64]> for $name {
            fn from(v: &[f64]) -> Self {
                Self(v.to_vec())
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(v: [f64; N]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

real_vector!(
    /// Steady-state flow per queue (jobs per unit time).
    FlowVector
);
real_vector!(
    /// Control parameters.
    ParamVector
);

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Convex, compact control region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{θ ≥ 0, Σθ ≤ budget}`.
    BudgetSimplex { dim: usize, budget: f64 },
}

impl FeasibleSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("box upper bounds", lower.len(), upper.len())?;
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "box bounds for coordinate {i} are invalid: [{lo}, {hi}]"
                )));
            }
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    pub fn unit_box(dim: usize) -> Self {
        FeasibleSet::Box {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn budget_simplex(dim: usize, budget: f64) -> Result<Self> {
        if !(budget > 0.0) || !budget.is_finite() {
            return Err(Error::InvalidModel(format!(
                "budget must be positive, got {budget}"
            )));
        }
        Ok(FeasibleSet::BudgetSimplex { dim, budget })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::BudgetSimplex { dim, .. } => *dim,
        }
    }

    /// Membership up to an absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol),
            FeasibleSet::BudgetSimplex { budget, .. } => {
                x.iter().all(|v| *v >= -tol) && x.iter().sum::<f64>() <= budget + tol
            }
        }
    }

    /// Distance from `x` to the boundary along `-e_j` and `+e_j`.
    pub fn room(&self, x: &[f64], j: usize) -> (f64, f64) {
        match self {
            FeasibleSet::Box { lower, upper } => (x[j] - lower[j], upper[j] - x[j]),
            FeasibleSet::BudgetSimplex { budget, .. } => {
                (x[j], budget - x.iter().sum::<f64>())
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &[f64]) -> Result<ParamVector> {
        check_dim("projection input", self.dim(), x.len())?;
        let out = match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect(),
            FeasibleSet::BudgetSimplex { budget, .. } => project_budget(x, *budget),
        };
        Ok(ParamVector::new(out))
    }
}

fn project_budget(x: &[f64], budget: f64) -> Vec<f64> {
    let positive: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    if positive.iter().sum::<f64>() <= budget {
        return positive;
    }
    // Projection onto {u >= 0, Σu = budget}: find the threshold τ with
    // Σ max(x_i - τ, 0) = budget.
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - budget) / (k + 1) as f64;
        if *v - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    x.iter().map(|v| (v - tau).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn box_clamps() {
        let set = FeasibleSet::unit_box(2);
        assert_eq!(set.project(&[0.9, -0.1]).unwrap().as_slice(), &[0.9, 0.0]);
    }

    #[test]
    fn simplex_feasible_point_is_fixed() {
        let set = FeasibleSet::budget_simplex(5, 25.0).unwrap();
        let x = [5.0; 5];
        assert_eq!(set.project(&x).unwrap().as_slice(), &x);
    }

    #[test]
    fn simplex_uniform_shift() {
        let set = FeasibleSet::budget_simplex(5, 25.0).unwrap();
        let p = set.project(&[6.0; 5]).unwrap();
        for v in p.iter() {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simplex_zeroes_negative_coordinates() {
        let set = FeasibleSet::budget_simplex(3, 10.0).unwrap();
        assert_eq!(set.project(&[-1.0, 2.0, 3.0]).unwrap().as_slice(), &[0.0, 2.0, 3.0]);
        let p = set.project(&[-1.0, 20.0, 3.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 10.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let set = FeasibleSet::unit_box(2);
        assert!(matches!(
            set.project(&[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 2, found: 3, .. })
        ));
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(FeasibleSet::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(FeasibleSet::budget_simplex(3, 0.0).is_err());
    }

    fn any_set() -> impl Strategy<Value = FeasibleSet> {
        prop_oneof![
            (1usize..6).prop_flat_map(|n| {
                (
                    prop::collection::vec(-2.0f64..0.0, n),
                    prop::collection::vec(0.0f64..2.0, n),
                )
                    .prop_map(|(lo, hi)| FeasibleSet::boxed(lo, hi).unwrap())
            }),
            (1usize..6, 0.1f64..30.0)
                .prop_map(|(n, b)| FeasibleSet::budget_simplex(n, b).unwrap()),
        ]
    }

    fn set_and_points() -> impl Strategy<Value = (FeasibleSet, Vec<f64>, Vec<f64>)> {
        any_set().prop_flat_map(|set| {
            let n = set.dim();
            (
                Just(set),
                prop::collection::vec(-40.0f64..40.0, n),
                prop::collection::vec(-40.0f64..40.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent((set, x, _y) in set_and_points()) {
            let p = set.project(&x).unwrap();
            prop_assert!(set.contains(&p, 1e-9));
            let pp = set.project(&p).unwrap();
            for (a, b) in p.iter().zip(pp.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn projection_is_non_expansive((set, x, y) in set_and_points()) {
            let px = set.project(&x).unwrap();
            let py = set.project(&y).unwrap();
            let d_proj: Vec<f64> = px.iter().zip(py.iter()).map(|(a, b)| a - b).collect();
            let d_in: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            prop_assert!(norm2(&d_proj) <= norm2(&d_in) + 1e-10);
        }

        #[test]
        fn projection_is_closest_among_samples((set, x, y) in set_and_points()) {
            // Any feasible point is at least as far from x as the projection.
            let px = set.project(&x).unwrap();
            let other = set.project(&y).unwrap();
            let dist = |u: &[f64]| norm2(&u.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assert!(dist(&px) <= dist(&other) + 1e-10);
        }
    }
}
