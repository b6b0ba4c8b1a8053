//! Compressed sparse row matrices.
//!
//! Used for adjacency structure and the normalized graph operator; values are
//! stored row by row with sorted column indices.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Build from (row, col, value) triples. Duplicate coordinates are summed,
    /// explicit zeros are dropped.
    pub fn from_coo(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(r, c, v) in entries {
            if r >= rows || c >= cols {
                return Err(Error::dim(format!("entry ({r},{c}) outside {rows}x{cols}")));
            }
            sorted.push((r, c, v));
        }
        sorted.sort_unstable_by_key(|e| (e.0, e.1));

        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            offsets[r + 1] = indices.len();
            last = Some((r, c));
        }
        // forward-fill offsets for empty rows
        for r in 0..rows {
            if offsets[r + 1] < offsets[r] {
                offsets[r + 1] = offsets[r];
            }
        }
        // drop stored zeros
        let mut m = SparseMatrix {
            rows,
            cols,
            offsets,
            indices,
            values,
            symmetric: false,
        };
        m.prune_zeros();
        m.symmetric = m.rows == m.cols && m.is_structurally_symmetric();
        m.check_invariants()?;
        Ok(m)
    }

    /// Symmetric binary adjacency from undirected edge pairs; both (u,v) and
    /// (v,u) entries are stored, duplicates collapse to a single edge.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::dim(format!(
                    "edge ({u},{v}) outside graph of {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::arg(format!("self-loop on node {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = vec![0usize; n + 1];
        let mut indices = Vec::new();
        for (i, neigh) in adj.iter_mut().enumerate() {
            neigh.sort_unstable();
            neigh.dedup();
            indices.extend_from_slice(neigh);
            offsets[i + 1] = indices.len();
        }
        let values = vec![1.0; indices.len()];
        Ok(SparseMatrix {
            rows: n,
            cols: n,
            offsets,
            indices,
            values,
            symmetric: true,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            offsets: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
            symmetric: rows == cols,
        }
    }

    fn prune_zeros(&mut self) {
        if !self.values.contains(&0.0) {
            return;
        }
        let mut offsets = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.offsets[r]..self.offsets[r + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            offsets[r + 1] = indices.len();
        }
        self.offsets = offsets;
        self.indices = indices;
        self.values = values;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.offsets[i];
        let hi = self.offsets[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.offsets.len() != self.rows + 1 || self.offsets[0] != 0 {
            return Err(Error::arg("bad offsets".to_string()));
        }
        for r in 0..self.rows {
            if self.offsets[r + 1] < self.offsets[r] {
                return Err(Error::arg("offsets decrease".to_string()));
            }
            let (cols, _) = self.row(r);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::arg(format!("row {r} indices not strictly sorted")));
                }
            }
            if let Some(&last) = cols.last() {
                if last >= self.cols {
                    return Err(Error::dim(format!("row {r} column {last} out of range")));
                }
            }
        }
        if self.symmetric && !self.is_structurally_symmetric() {
            return Err(Error::arg(
                "symmetric flag set on asymmetric matrix".to_string(),
            ));
        }
        Ok(())
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for r in 0..self.rows {
            let (cols, _) = self.row(r);
            for &c in cols {
                let (back, _) = self.row(c);
                if back.binary_search(&r).is_err() {
                    return false;
                }
            }
        }
        true
    }

    /// Degree of each row, counting values (row sums).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// Undirected edge list (u < v). Meaningful for symmetric matrices.
    pub fn upper_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for r in 0..self.rows {
            let (cols, _) = self.row(r);
            for &c in cols {
                if r < c {
                    edges.push((r, c));
                }
            }
        }
        edges
    }

    /// Sparse-dense product `self * d`.
    pub fn spmm(&self, d: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != d.rows() {
            return Err(Error::dim(format!(
                "spmm: {}x{} * {}x{}",
                self.rows,
                self.cols,
                d.rows(),
                d.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, d.cols());
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let out_row = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let src = d.row(c);
                for (o, &x) in out_row.iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, v);
            }
        }
        out
    }
}
