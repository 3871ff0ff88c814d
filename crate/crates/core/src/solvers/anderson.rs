use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Type-II Anderson mixing with a bounded history of residual and map
/// differences.
pub(crate) struct AndersonMixer {
    depth: usize,
    previous: Option<(Vec<f64>, Vec<f64>)>,
    delta_f: VecDeque<Vec<f64>>,
    delta_g: VecDeque<Vec<f64>>,
}

const RIDGE: f64 = 1e-10;

impl AndersonMixer {
    pub fn new(_dim: usize, depth: usize) -> Self {
        AndersonMixer {
            depth,
            previous: None,
            delta_f: VecDeque::with_capacity(depth),
            delta_g: VecDeque::with_capacity(depth),
        }
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.delta_f.clear();
        self.delta_g.clear();
    }

    /// Given `g = G(x)` and `f = g − x`, returns the next iterate.
    pub fn next(&mut self, g: &[f64], f: &[f64]) -> Vec<f64> {
        if let Some((g_prev, f_prev)) = self.previous.take() {
            if self.delta_f.len() == self.depth {
                self.delta_f.pop_front();
                self.delta_g.pop_front();
            }
            self.delta_f
                .push_back(f.iter().zip(&f_prev).map(|(a, b)| a - b).collect());
            self.delta_g
                .push_back(g.iter().zip(&g_prev).map(|(a, b)| a - b).collect());
        }
        self.previous = Some((g.to_vec(), f.to_vec()));

        let m = self.delta_f.len();
        if m == 0 {
            return g.to_vec();
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut normal = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..m {
            for j in 0..=i {
                let v = dot(&self.delta_f[i], &self.delta_f[j]);
                normal[(i, j)] = v;
                normal[(j, i)] = v;
            }
            rhs[i] = dot(&self.delta_f[i], f);
        }
        let scale = (0..m).map(|i| normal[(i, i)]).fold(0.0f64, f64::max);
        if scale == 0.0 {
            return g.to_vec();
        }
        for i in 0..m {
            normal[(i, i)] += RIDGE * scale;
        }
        let Some(gamma) = normal.cholesky().map(|c| c.solve(&rhs)) else {
            self.reset();
            return g.to_vec();
        };
        let mut next = g.to_vec();
        for (i, dg) in self.delta_g.iter().enumerate() {
            let c = gamma[i];
            next.iter_mut().zip(dg).for_each(|(v, d)| *v -= c * d);
        }
        next
    }
}
