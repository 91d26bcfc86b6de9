//! Envelope (profile) LDL^T for small symmetric systems.
//!
//! Rows are first reordered by reverse Cuthill-McKee so that the nonzeros of
//! time-structured problems gather near the diagonal; the factorization then
//! only touches entries inside each row's envelope. No pivoting is done, so
//! the input must be positive definite or quasi-definite.

use std::collections::VecDeque;

use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct EnvelopeLdl {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    // row i of the unit lower factor holds columns first[i]..i at
    // l[start[i]..start[i + 1]]
    start: Vec<usize>,
    l: Vec<f64>,
    d: Vec<f64>,
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `m`.
pub fn rcm_order(m: &DMatrix<f64>) -> Vec<usize> {
    let n = m.nrows();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && m[(j, i)] != 0.0).collect()).collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).expect("unvisited node");
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

impl EnvelopeLdl {
    /// Factors `m` (only the lower triangle is read). Returns `None` when a
    /// pivot vanishes or is not finite.
    pub fn factor(m: &DMatrix<f64>) -> Option<Self> {
        Self::factor_ordered(m, rcm_order(m))
    }

    /// Factors `m` under a given symmetric permutation, e.g. one ordering
    /// reused across matrices with the same pattern.
    pub fn factor_ordered(m: &DMatrix<f64>, perm: Vec<usize>) -> Option<Self> {
        let n = m.nrows();
        let entry = |i: usize, j: usize| {
            let (a, b) = (perm[i], perm[j]);
            m[(a.max(b), a.min(b))]
        };
        let first: Vec<usize> = (0..n).map(|i| (0..=i).find(|&j| entry(i, j) != 0.0).unwrap_or(i)).collect();
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + i - first[i]);
        }
        let mut l = vec![0.0; start[n]];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let fi = first[i];
            let (done, row) = l.split_at_mut(start[i]);
            let row = &mut row[..i - fi];
            for j in fi..i {
                row[j - fi] = entry(i, j);
            }
            for j in fi..i {
                let lj = &done[start[j]..];
                let k0 = fi.max(first[j]);
                let mut s = row[j - fi];
                for k in k0..j {
                    s -= row[k - fi] * d[k] * lj[k - first[j]];
                }
                row[j - fi] = s / d[j];
            }
            let mut s = entry(i, i);
            for k in fi..i {
                s -= row[k - fi] * row[k - fi] * d[k];
            }
            if !s.is_finite() || s.abs() < 1e-300 {
                return None;
            }
            d[i] = s;
        }
        Some(Self { n, perm, first, start, l, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `m x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let fi = self.first[i];
            x[i] -= row.iter().zip(&x[fi..i]).map(|(a, b)| a * b).sum::<f64>();
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let xi = x[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let fi = self.first[i];
            for (xk, a) in x[fi..i].iter_mut().zip(row) {
                *xk -= a * xi;
            }
        }
        for (i, &p) in self.perm.iter().enumerate() {
            b[p] = x[i];
        }
    }
}
