use super::tensor::Tensor;

/// Compressed sparse row matrix with `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored `(col, value)` entries of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn transpose(&self) -> CsrMatrix {
        let triplets: Vec<(usize, usize, f64)> = (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        CsrMatrix::from_triplets(self.cols, self.rows, &triplets)
    }

    /// Scales row `r` by `factors[r]`.
    pub fn scale_rows(&self, factors: &[f64]) -> CsrMatrix {
        assert_eq!(factors.len(), self.rows);
        let mut out = self.clone();
        for (r, f) in factors.iter().enumerate() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] *= f;
            }
        }
        out
    }

    /// `out += self · dense` with `dense: cols × n` row-major.
    pub(crate) fn spmm_into(&self, dense: &[f64], n: usize, out: &mut [f64]) {
        debug_assert_eq!(dense.len(), self.cols * n);
        for r in 0..self.rows {
            let out_row = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                let src = &dense[c * n..(c + 1) * n];
                for (o, &s) in out_row.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }

    pub fn spmm(&self, dense: &Tensor) -> Tensor {
        assert_eq!(dense.rows(), self.cols, "spmm inner dimension");
        let n = dense.cols();
        let mut out = vec![0.0; self.rows * n];
        self.spmm_into(dense.data(), n, &mut out);
        Tensor::from_parts(vec![self.rows, n], out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] += v;
            }
        }
        Tensor::from_parts(vec![self.rows, self.cols], out)
    }
}
