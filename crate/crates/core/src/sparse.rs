use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use nalgebra::DMatrix;

/// Compressed-row sparsity pattern of a square matrix. Column indices are
/// sorted and unique within each row. The pattern is fixed when a model is
/// built; matrices evaluated at different parameters share it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Builds a pattern from `(row, col)` positions, which must be sorted by
    /// row then column and unique.
    pub(crate) fn from_sorted(n: usize, positions: &[(usize, usize)]) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _) in positions {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = positions.iter().map(|&(_, c)| c).collect();
        SparsityPattern {
            n,
            row_ptr,
            col_idx,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.row_ptr[row]..self.row_ptr[row + 1]
    }

    pub fn cols(&self, row: usize) -> &[usize] {
        &self.col_idx[self.row_range(row)]
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    /// Iterates `(entry index, row, col)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n).flat_map(move |r| self.row_range(r).map(move |k| (k, r, self.col_idx[k])))
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cols(row).binary_search(&col).is_ok()
    }

    /// Topological order of the dependency graph in which row `r` depends on
    /// every column `c` stored in it. Returns `None` on a cycle (self-loops
    /// included). Ties are broken by lowest index first.
    ///
    /// In the returned order every dependency precedes its dependents, so
    /// the matrix permuted by it is strictly lower triangular.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.n;
        let mut indegree = vec![0usize; n];
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (_, r, c) in self.entries() {
            if r == c {
                return None;
            }
            indegree[r] += 1;
            dependents[c].push(r);
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &r in &dependents[i] {
                indegree[r] -= 1;
                if indegree[r] == 0 {
                    ready.push(Reverse(r));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Greedy grouping of columns such that no two columns in a group share
    /// a row. Perturbing all columns of a group at once recovers each stored
    /// entry separately.
    pub fn column_groups(&self) -> Vec<Vec<usize>> {
        let mut rows_of_col: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (_, r, c) in self.entries() {
            rows_of_col[c].push(r);
        }
        greedy_disjoint_groups(&rows_of_col, self.n)
    }
}

/// Greedy colouring of items by the rows they touch: items in the same group
/// touch disjoint row sets. Items touching no row are left out.
pub(crate) fn greedy_disjoint_groups(rows_of_item: &[Vec<usize>], n_rows: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut claimed_by: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
    let mut forbidden: Vec<bool> = Vec::new();
    for (item, rows) in rows_of_item.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        forbidden.iter_mut().for_each(|f| *f = false);
        for &r in rows {
            for &g in &claimed_by[r] {
                forbidden[g] = true;
            }
        }
        let slot = forbidden.iter().position(|f| !f).unwrap_or_else(|| {
            groups.push(Vec::new());
            forbidden.push(false);
            groups.len() - 1
        });
        for &r in rows {
            claimed_by[r].push(slot);
        }
        groups[slot].push(item);
    }
    groups
}

/// Matrix values laid over a shared [`SparsityPattern`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Self {
        assert_eq!(pattern.nnz(), values.len(), "values must match pattern");
        CsrMatrix { pattern, values }
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.pattern.row_range(row);
        match self.pattern.cols(row).binary_search(&col) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// `out = A x + add`.
    pub fn mul_add(&self, x: &[f64], add: &[f64], out: &mut [f64]) {
        let p = &self.pattern;
        for r in 0..p.n {
            let mut acc = add[r];
            for k in p.row_range(r) {
                acc += self.values[k] * x[p.col_idx[k]];
            }
            out[r] = acc;
        }
    }

    /// `out = Aᵀ x + add`.
    pub fn mul_transpose_add(&self, x: &[f64], add: &[f64], out: &mut [f64]) {
        out.copy_from_slice(add);
        let p = &self.pattern;
        for r in 0..p.n {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for k in p.row_range(r) {
                out[p.col_idx[k]] += self.values[k] * xr;
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|r| self.pattern.row_range(r).map(|k| self.values[k]).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim()];
        for (k, _, c) in self.pattern.entries() {
            sums[c] += self.values[k];
        }
        sums
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (k, r, c) in self.pattern.entries() {
            m[(r, c)] += self.values[k];
        }
        m
    }
}
