use nalgebra::{DMatrix, DVector};

use super::anderson::AndersonMixer;
use super::{SolverConfig, SolverMethod};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::types::norm_inf;

/// Which of `x = A x + rhs` (direct) or `x = Aᵀ x + rhs` (adjoint) to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Orientation {
    Direct,
    Transposed,
}

#[derive(Debug, Clone)]
pub(crate) struct LinearSolution {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

struct Operator<'a> {
    a: &'a CsrMatrix,
    rhs: &'a [f64],
    orientation: Orientation,
}

impl Operator<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self.orientation {
            Orientation::Direct => self.a.mul_add(x, self.rhs, out),
            Orientation::Transposed => self.a.mul_transpose_add(x, self.rhs, out),
        }
    }

    fn residual(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.apply(x, &mut g);
        g.iter().zip(x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

pub(crate) fn solve_fixed_point(
    a: &CsrMatrix,
    rhs: &[f64],
    order: Option<&[usize]>,
    orientation: Orientation,
    method: SolverMethod,
    config: &SolverConfig,
) -> Result<LinearSolution> {
    let op = Operator { a, rhs, orientation };
    match method {
        SolverMethod::AcyclicForward => {
            let order = order.ok_or_else(|| {
                Error::InvalidConfig("acyclic forward solve requires a topological order".into())
            })?;
            let values = match orientation {
                Orientation::Direct => forward_substitution(a, rhs, order),
                Orientation::Transposed => back_substitution(a, rhs, order),
            };
            let residual_norm = op.residual(&values);
            Ok(LinearSolution {
                values,
                iterations: 1,
                residual_norm,
            })
        }
        SolverMethod::DenseDirect => dense(&op, config),
        SolverMethod::Picard => picard(&op, config),
        SolverMethod::Anderson | SolverMethod::Auto => anderson(&op, config),
    }
}

/// `x_r = rhs_r + Σ_c A_rc x_c`, rows visited in topological order.
fn forward_substitution(a: &CsrMatrix, rhs: &[f64], order: &[usize]) -> Vec<f64> {
    let p = a.pattern();
    let vals = a.values();
    let mut x = vec![0.0; rhs.len()];
    for &r in order {
        let mut acc = rhs[r];
        for k in p.row_range(r) {
            acc += vals[k] * x[p.col_indices()[k]];
        }
        x[r] = acc;
    }
    x
}

/// `(I − A)ᵀ y = rhs` by reverse topological sweep: once row `r` is reached
/// every dependent has already scattered into `y_r`.
fn back_substitution(a: &CsrMatrix, rhs: &[f64], order: &[usize]) -> Vec<f64> {
    let p = a.pattern();
    let vals = a.values();
    let mut y = rhs.to_vec();
    for &r in order.iter().rev() {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        for k in p.row_range(r) {
            y[p.col_indices()[k]] += vals[k] * yr;
        }
    }
    y
}

fn dense(op: &Operator<'_>, config: &SolverConfig) -> Result<LinearSolution> {
    let n = op.rhs.len();
    let mut m = DMatrix::<f64>::identity(n, n) - op.a.to_dense();
    if op.orientation == Orientation::Transposed {
        m.transpose_mut();
    }
    let lu = m.lu();
    let mut x = lu
        .solve(&DVector::from_column_slice(op.rhs))
        .ok_or(Error::NoConvergence {
            iterations: 1,
            residual: f64::INFINITY,
        })?;
    let mut residual_norm = op.residual(x.as_slice());
    // A couple of refinement sweeps absorb LU rounding on ill-conditioned inputs.
    for _ in 0..3 {
        if residual_norm <= config.fp_tolerance {
            break;
        }
        let mut g = vec![0.0; n];
        op.apply(x.as_slice(), &mut g);
        let r = DVector::from_iterator(n, g.iter().zip(x.iter()).map(|(a, b)| a - b));
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
        residual_norm = op.residual(x.as_slice());
    }
    if residual_norm > config.fp_tolerance {
        return Err(Error::NoConvergence {
            iterations: 1,
            residual: residual_norm,
        });
    }
    Ok(LinearSolution {
        values: x.as_slice().to_vec(),
        iterations: 1,
        residual_norm,
    })
}

fn picard(op: &Operator<'_>, config: &SolverConfig) -> Result<LinearSolution> {
    let n = op.rhs.len();
    let mut x = op.rhs.to_vec();
    let mut g = vec![0.0; n];
    let mut best = f64::INFINITY;
    for k in 1..=config.max_fp_iterations {
        op.apply(&x, &mut g);
        let res = g.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        best = best.min(res);
        if res <= config.fp_tolerance {
            return Ok(LinearSolution {
                values: x,
                iterations: k,
                residual_norm: res,
            });
        }
        std::mem::swap(&mut x, &mut g);
    }
    Err(Error::NoConvergence {
        iterations: config.max_fp_iterations,
        residual: best,
    })
}

fn anderson(op: &Operator<'_>, config: &SolverConfig) -> Result<LinearSolution> {
    let n = op.rhs.len();
    let mut mixer = AndersonMixer::new(n, config.anderson_depth);
    let mut x = op.rhs.to_vec();
    let mut g = vec![0.0; n];
    let mut best = f64::INFINITY;
    for k in 1..=config.max_fp_iterations {
        op.apply(&x, &mut g);
        let f: Vec<f64> = g.iter().zip(&x).map(|(a, b)| a - b).collect();
        let res = norm_inf(&f);
        if res <= config.fp_tolerance {
            return Ok(LinearSolution {
                values: x,
                iterations: k,
                residual_norm: res,
            });
        }
        if res > 1e4 * best {
            // Mixing went astray; fall back to the plain map from here.
            mixer.reset();
        }
        best = best.min(res);
        x = mixer.next(&g, &f);
    }
    Err(Error::NoConvergence {
        iterations: config.max_fp_iterations,
        residual: best,
    })
}
