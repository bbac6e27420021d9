use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix used as a constant left operand on the tape.
///
/// Mobility graphs have one edge per person per step, so the dense
/// `(P+L)×(P+L)` adjacency is almost entirely zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Contract(format!(
                    "triplet ({r}, {c}) outside {rows}×{cols}"
                )));
            }
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut row in per_row {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(t: &Tensor) -> Result<Self> {
        let (r, c) = t.dims2()?;
        let mut trip = Vec::new();
        for i in 0..r {
            for j in 0..c {
                let v = t.get(i, j);
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(r, c, &trip)
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        let cols = self.cols;
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.values_mut()[r * cols + c] += v;
            }
        }
        out
    }

    /// `self · x`
    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        let (k, n) = x.dims2()?;
        if k != self.cols {
            return Err(Error::shape("spmm", &[self.rows, self.cols], x.shape()));
        }
        let xv = x.values();
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let dst = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                let src = &xv[c * n..(c + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        Ok(Tensor::from_parts(vec![self.rows, n], out))
    }

    /// `selfᵀ · g`
    pub fn transpose_matmul(&self, g: &Tensor) -> Result<Tensor> {
        let (k, n) = g.dims2()?;
        if k != self.rows {
            return Err(Error::shape("spmm_t", &[self.cols, self.rows], g.shape()));
        }
        let gv = g.values();
        let mut out = vec![0.0; self.cols * n];
        for r in 0..self.rows {
            let src = &gv[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                let dst = &mut out[c * n..(c + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        Ok(Tensor::from_parts(vec![self.cols, n], out))
    }
}
