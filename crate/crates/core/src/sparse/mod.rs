//! Sparse matrix storage and the factorizations every GMRF computation
//! runs through.
//!
//! Symmetric matrices keep only their lower triangle in compressed-column
//! form. Rectangular design/projector matrices are stored row-compressed.
//! Explicit zeros are kept: a pattern is a structural property, so
//! precisions whose values change with hyperparameters keep a fixed
//! pattern and can reuse one symbolic analysis.

mod cholesky;
mod ordering;
mod selinv;

pub use cholesky::{cholesky, CholeskyFactor, SymbolicCholesky};
pub use ordering::minimum_degree;
pub use selinv::SelectedInverse;

use crate::error::{Error, Result};

/// Symmetric sparse matrix, lower triangle in compressed-column storage.
///
/// Row indices are sorted within each column and every stored entry
/// satisfies `row >= col`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Assemble from coordinate triplets. Duplicates are summed and entries
    /// given in the upper triangle are mirrored into the lower one.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("dimension must be positive".into()));
        }
        let mut lower = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::IndexOutOfRange { row: r, col: c, dim });
            }
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            lower.push((c, r, v));
        }
        lower.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(lower.len());
        let mut values: Vec<f64> = Vec::with_capacity(lower.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in lower {
            if last == Some((c, r)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for j in 0..dim {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self { dim, col_ptr, row_idx, values })
    }

    pub(crate) fn from_raw_parts(
        dim: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(col_ptr.len(), dim + 1);
        debug_assert_eq!(row_idx.len(), values.len());
        Self { dim, col_ptr, row_idx, values }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        Self {
            dim,
            col_ptr: (0..=dim).collect(),
            row_idx: (0..dim).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored lower-triangle entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Iterate the stored lower-triangle entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        let slice = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match slice.binary_search(&r) {
            Ok(k) => self.values[self.col_ptr[c] + k],
            Err(_) => 0.0,
        }
    }

    /// Position of a stored entry in `values`, if present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        let start = self.col_ptr[c];
        self.row_idx[start..self.col_ptr[c + 1]]
            .binary_search(&r)
            .ok()
            .map(|k| start + k)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.get(j, j)).collect()
    }

    /// `Q x` using the implied upper triangle.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut out = vec![0.0; self.dim];
        for j in 0..self.dim {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p];
                out[i] += v * x[j];
                if i != j {
                    out[j] += v * x[i];
                }
            }
        }
        Ok(out)
    }

    /// `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let qx = self.mul_vec(x)?;
        Ok(qx.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Entrywise sum; the result's pattern is the union of both patterns.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut col_ptr = Vec::with_capacity(self.dim + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        col_ptr.push(0);
        for j in 0..self.dim {
            let (mut p, pe) = (self.col_ptr[j], self.col_ptr[j + 1]);
            let (mut q, qe) = (other.col_ptr[j], other.col_ptr[j + 1]);
            while p < pe || q < qe {
                let rp = if p < pe { self.row_idx[p] } else { usize::MAX };
                let rq = if q < qe { other.row_idx[q] } else { usize::MAX };
                if rp == rq {
                    row_idx.push(rp);
                    values.push(self.values[p] + other.values[q]);
                    p += 1;
                    q += 1;
                } else if rp < rq {
                    row_idx.push(rp);
                    values.push(self.values[p]);
                    p += 1;
                } else {
                    row_idx.push(rq);
                    values.push(other.values[q]);
                    q += 1;
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self { dim: self.dim, col_ptr, row_idx, values })
    }

    /// Add `value` to every diagonal entry (inserting missing ones).
    pub fn add_diagonal(&self, value: f64) -> Self {
        self.add(&Self::diagonal(&vec![value; self.dim]))
            .expect("dimensions agree")
    }

    /// Kronecker product `self ⊗ other`; entry
    /// `(i·dim_b + k, j·dim_b + l) = A_ij · B_kl`.
    pub fn kron(&self, other: &Self) -> Self {
        let nb = other.dim;
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz() * 2);
        for (i, j, a) in self.iter() {
            for (k, l, b) in other.iter() {
                triplets.push((i * nb + k, j * nb + l, a * b));
                // For off-diagonal blocks the upper-triangle entry of B also
                // lands in the lower triangle of the product.
                if i != j && k != l {
                    triplets.push((i * nb + l, j * nb + k, a * b));
                }
            }
        }
        Self::from_triplets(self.dim * nb, &triplets).expect("indices in range")
    }

    /// Symmetric permutation: entry `(i, j)` moves to `(inv[i], inv[j])`
    /// where `inv` is the inverse of `perm` (`perm[new] = old`).
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: perm.len() });
        }
        let mut inv = vec![0; self.dim];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let triplets: Vec<_> = self.iter().map(|(i, j, v)| (inv[i], inv[j], v)).collect();
        Self::from_triplets(self.dim, &triplets)
    }

    /// Dense row-major copy (tests, small debugging).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for (i, j, v) in self.iter() {
            out[i][j] = v;
            out[j][i] = v;
        }
        out
    }

    /// Adjacency lists of the off-diagonal graph, sorted.
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.dim];
        for (i, j, _) in self.iter() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// True when both matrices share the same stored pattern.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.dim == other.dim && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }
}

/// Rectangular sparse matrix in compressed-row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row `(column, value)` lists. Duplicate columns within
    /// a row are summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let start = col_idx.len();
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::IndexOutOfRange { row: r, col: c, dim: ncols });
                }
                if col_idx.len() > start && *col_idx.last().expect("nonempty") == c {
                    *values.last_mut().expect("nonempty") += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { nrows, ncols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Dense single column as a sparse `n × 1` matrix.
    pub fn from_column(values: &[f64]) -> Self {
        let rows = values.iter().map(|&v| vec![(0, v)]).collect();
        Self::from_rows(1, rows).expect("column 0 is in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (self.col_idx[p], self.values[p]))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch { expected: self.ncols, got: x.len() });
        }
        Ok((0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect())
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.nrows {
            return Err(Error::DimensionMismatch { expected: self.nrows, got: y.len() });
        }
        let mut out = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
        Ok(out)
    }

    /// Concatenate column blocks `[A₁ A₂ …]`; all blocks need the same row count.
    pub fn hstack(blocks: &[&SparseMatrix]) -> Result<Self> {
        let nrows = blocks.first().map(|b| b.nrows).unwrap_or(0);
        let mut rows = vec![Vec::new(); nrows];
        let mut offset = 0;
        for b in blocks {
            if b.nrows != nrows {
                return Err(Error::DimensionMismatch { expected: nrows, got: b.nrows });
            }
            for (r, row) in rows.iter_mut().enumerate() {
                row.extend(b.row(r).map(|(c, v)| (c + offset, v)));
            }
            offset += b.ncols;
        }
        Self::from_rows(offset, rows)
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            map[old] = new;
        }
        let rows = (0..self.nrows)
            .map(|r| {
                self.row(r)
                    .filter(|(c, _)| map[*c] != usize::MAX)
                    .map(|(c, v)| (map[c], v))
                    .collect()
            })
            .collect();
        Self::from_rows(cols.len(), rows).expect("remapped columns in range")
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_from_triplets() {
        let m = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(m, SparseSymMatrix::identity(2));
    }

    #[test]
    fn duplicates_are_summed() {
        let m = SparseSymMatrix::from_triplets(1, &[(0, 0, 1.0), (0, 0, 1.0)]).unwrap();
        assert_eq!(m.to_dense(), vec![vec![2.0]]);
    }

    #[test]
    fn mirrored_entries_fold_into_lower_triangle() {
        let m = SparseSymMatrix::from_triplets(
            2,
            &[(1, 0, 0.5), (0, 1, 0.5), (0, 0, 2.0), (1, 1, 2.0)],
        )
        .unwrap();
        let entries: Vec<_> = m.iter().collect();
        assert_eq!(entries, vec![(0, 0, 2.0), (1, 0, 1.0), (1, 1, 2.0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SparseSymMatrix::from_triplets(0, &[]).is_err());
        assert!(matches!(
            SparseSymMatrix::from_triplets(2, &[(2, 0, 1.0)]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn kron_of_diagonals() {
        let a = SparseSymMatrix::diagonal(&[2.0, 3.0]);
        let b = SparseSymMatrix::diagonal(&[5.0, 7.0]);
        assert_eq!(a.kron(&b), SparseSymMatrix::diagonal(&[10.0, 14.0, 15.0, 21.0]));
        assert_eq!(
            SparseSymMatrix::identity(2).kron(&SparseSymMatrix::identity(3)),
            SparseSymMatrix::identity(6)
        );
    }

    #[test]
    fn kron_matches_dense_oracle() {
        // 2x2 AR1 precision (a = 0.7) and a 2x2 SPDE-like precision.
        let a = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, -0.7), (1, 1, 1.0)]).unwrap();
        let b = SparseSymMatrix::from_triplets(2, &[(0, 0, 3.0), (1, 0, -1.2), (1, 1, 2.5)]).unwrap();
        let k = a.kron(&b).to_dense();
        let (ad, bd) = (a.to_dense(), b.to_dense());
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[i * 2 + p][j * 2 + q], ad[i][j] * bd[p][q]);
                    }
                }
            }
        }
    }

    #[test]
    fn add_unions_patterns() {
        let a = SparseSymMatrix::from_triplets(3, &[(0, 0, 1.0), (2, 0, 1.0)]).unwrap();
        let b = SparseSymMatrix::from_triplets(3, &[(1, 1, 2.0), (2, 0, 1.0)]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.get(2, 0), 2.0);
        assert_eq!(c.get(0, 2), 2.0);
        assert_eq!(c.get(1, 1), 2.0);
        assert_eq!(c.nnz(), 3);
    }

    #[test]
    fn csr_products() {
        let a = SparseMatrix::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![(1, -1.0)]]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![7.0, -2.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0]).unwrap(), vec![1.0, -1.0, 2.0]);
        let h = SparseMatrix::hstack(&[&a, &SparseMatrix::from_column(&[5.0, 6.0])]).unwrap();
        assert_eq!(h.ncols(), 4);
        assert_eq!(h.mul_vec(&[0.0, 0.0, 0.0, 1.0]).unwrap(), vec![5.0, 6.0]);
    }
}
