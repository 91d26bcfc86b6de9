use nalgebra::DMatrix;

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(ncols: usize) -> Self {
        Self { nrows: 0, ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row; zero coefficients are dropped.
    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        for (j, v) in entries {
            debug_assert!(j < self.ncols);
            if v != 0.0 {
                self.indices.push(j);
                self.values.push(v);
            }
        }
        self.indptr.push(self.indices.len());
        self.nrows += 1;
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = Self::new(m.ncols());
        for i in 0..m.nrows() {
            out.push_row((0..m.ncols()).map(|j| (j, m[(i, j)])));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(j, v)| v * x[j]).sum()
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.nrows) {
            *o = self.row_dot(i, x);
        }
    }

    /// `out = A^T y`
    pub fn tr_mul_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, yi) in y.iter().enumerate().take(self.nrows) {
            if *yi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
    }

    pub fn scale(&mut self, row_scale: &[f64], col_scale: &[f64]) {
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                self.values[k] *= row_scale[i] * col_scale[self.indices[k]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let d = DMatrix::from_row_slice(3, 4, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 3.0, 0.0, 4.0]);
        let a = CsrMatrix::from_dense(&d);
        assert_eq!(a.to_dense(), d);
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut ax = [0.0; 3];
        a.mul_vec(&x, &mut ax);
        assert_eq!(ax, [7.0, 0.0, 21.0]);
        let y = [1.0, 5.0, -1.0];
        let mut aty = [0.0; 4];
        a.tr_mul_vec(&y, &mut aty);
        assert_eq!(aty, [2.0, -3.0, 2.0, -4.0]);
    }
}
