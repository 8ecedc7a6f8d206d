use std::fmt::Write as _;

use crate::error::{invalid, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Duplicate columns within a
    /// row are summed; rows are stored with ascending columns.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            let mut r = row.clone();
            r.sort_by_key(|e| e.0);
            let start = indices.len();
            for (c, v) in r {
                if c >= ncols {
                    return Err(invalid(format!("column {c} out of range for {ncols} columns")));
                }
                if !v.is_finite() {
                    return Err(invalid("matrix entries must be finite"));
                }
                if indices.len() > start && indices[indices.len() - 1] == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { ncols, indptr, indices, values })
    }

    pub fn identity(n: usize) -> Self {
        Self { ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(c, v)| v * x[c]).sum()
    }

    pub fn row_norm2(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v * v).sum()
    }

    /// `A x`
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `Aᵀ y`
    pub fn tmul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, yi) in y.iter().enumerate() {
            for (c, v) in self.row(i) {
                out[c] += v * yi;
            }
        }
        out
    }

    /// Sum of squared entries, `trace(AᵀA)`.
    pub fn frobenius2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Number of rows with a nonzero entry in each column.
    pub fn column_hits(&self) -> Vec<usize> {
        let mut hits = vec![0; self.ncols];
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            if v != 0.0 {
                hits[c] += 1;
            }
        }
        hits
    }

    /// Largest absolute row sum, `‖A‖∞`.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows()).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Largest absolute column sum, `‖A‖₁`.
    pub fn norm_one(&self) -> f64 {
        let mut s = vec![0.0; self.ncols];
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            s[c] += v.abs();
        }
        s.into_iter().fold(0.0, f64::max)
    }

    /// New matrix made of the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for &i in rows {
            for (c, v) in self.row(i) {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self { ncols: self.ncols, indptr, indices, values }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.nrows())
            .map(|i| {
                let mut r = vec![0.0; self.ncols];
                for (c, v) in self.row(i) {
                    r[c] = v;
                }
                r
            })
            .collect()
    }

    /// Matrix Market coordinate format, 1-based indices.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows(), self.ncols, self.nnz());
        for i in 0..self.nrows() {
            for (c, v) in self.row(i) {
                let _ = writeln!(s, "{} {} {:e}", i + 1, c + 1, v);
            }
        }
        s
    }

    pub fn from_matrix_market(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('%') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| invalid("empty matrix market text"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| invalid(format!("bad header `{header}`"))))
            .collect::<Result<_>>()?;
        let [nrows, ncols, _] = dims[..] else {
            return Err(invalid(format!("bad header `{header}`")));
        };
        let mut rows = vec![Vec::new(); nrows];
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || invalid(format!("bad entry `{line}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            let i: usize = f[0].parse().map_err(|_| bad())?;
            let j: usize = f[1].parse().map_err(|_| bad())?;
            let v: f64 = f[2].parse().map_err(|_| bad())?;
            if i == 0 || i > nrows || j == 0 {
                return Err(bad());
            }
            rows[i - 1].push((j - 1, v));
        }
        Self::from_rows(ncols, &rows)
    }
}
