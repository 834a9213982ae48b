//! Up-looking sparse Cholesky `P Q Pᵀ = L Lᵀ` with a reusable symbolic phase.
//!
//! The symbolic analysis (ordering, elimination tree, pattern of `L`) only
//! depends on the pattern of `Q`, so hyperparameter sweeps analyze once and
//! refactor many times.

use std::sync::Arc;

use super::{minimum_degree, SelectedInverse, SparseSymMatrix};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Debug)]
struct SymbolicInner {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `iperm[old] = new`.
    iperm: Vec<usize>,
    /// Input value index -> slot in the permuted upper triangle.
    value_map: Vec<usize>,
    in_col_ptr: Vec<usize>,
    in_row_idx: Vec<usize>,
    /// Pattern of `L`: per column, the diagonal first then rows ascending.
    lp: Vec<usize>,
    li: Vec<usize>,
    /// Supernodes: column ranges sharing one row pattern (that of their
    /// first column), stored as dense column-major panels.
    sn_ptr: Vec<usize>,
    sn_of: Vec<usize>,
    /// Offset of each panel in the panel storage; one extra entry at the end.
    sn_offset: Vec<usize>,
    /// Slot of the permuted upper triangle -> panel storage index.
    sn_map: Vec<usize>,
}

/// Ordering plus the nonzero pattern of the factor.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    inner: Arc<SymbolicInner>,
}

/// Numeric factor `L` of `P Q Pᵀ`, together with the matrix it factors.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: SymbolicCholesky,
    lx: Vec<f64>,
    matrix: SparseSymMatrix,
}

/// Factorize a symmetric positive-definite matrix.
pub fn cholesky(q: &SparseSymMatrix) -> Result<CholeskyFactor> {
    SymbolicCholesky::analyze(q).factor(q)
}

/// Nonzero pattern of row `k` of `L`, in topological order, written to
/// `stack[top..]`; returns `top`.
fn ereach(
    cp: &[usize],
    ci: &[usize],
    parent: &[usize],
    k: usize,
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = stack.len();
    let stamp = k + 1;
    let mut top = n;
    mark[k] = stamp;
    for &i0 in &ci[cp[k]..cp[k + 1]] {
        let mut i = i0;
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != stamp {
            stack[len] = i;
            len += 1;
            mark[i] = stamp;
            i = parent[i];
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

impl SymbolicCholesky {
    /// Minimum-degree ordering followed by symbolic factorization.
    pub fn analyze(q: &SparseSymMatrix) -> Self {
        Self::analyze_with_ordering(q, minimum_degree(q))
    }

    /// Symbolic factorization under a caller-supplied ordering
    /// (`perm[new] = old`).
    pub fn analyze_with_ordering(q: &SparseSymMatrix, perm: Vec<usize>) -> Self {
        let n = q.dim();
        assert_eq!(perm.len(), n, "ordering length must equal the dimension");
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Permuted upper triangle: entry (i, j) of Q goes to column max, row min.
        let mut counts = vec![0usize; n + 1];
        let entries: Vec<(usize, usize)> = q
            .iter()
            .map(|(i, j, _)| {
                let (a, b) = (iperm[i], iperm[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        for &(_, c) in &entries {
            counts[c + 1] += 1;
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let cp = counts.clone();
        let mut next = counts;
        let mut ci = vec![0; entries.len()];
        let mut value_map = vec![0; entries.len()];
        for (idx, &(r, c)) in entries.iter().enumerate() {
            let slot = next[c];
            next[c] += 1;
            ci[slot] = r;
            value_map[idx] = slot;
        }

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &i0 in &ci[cp[k]..cp[k + 1]] {
                let mut i = i0;
                while i != NONE && i < k {
                    let inext = ancestor[i];
                    ancestor[i] = k;
                    if inext == NONE {
                        parent[i] = k;
                    }
                    i = inext;
                }
            }
        }

        // Column counts, then the row pattern of each column.
        let mut stack = vec![0; n];
        let mut mark = vec![0; n];
        let mut colcount = vec![1usize; n];
        for k in 0..n {
            let top = ereach(&cp, &ci, &parent, k, &mut stack, &mut mark);
            for &i in &stack[top..] {
                colcount[i] += 1;
            }
        }
        let mut lp = vec![0; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + colcount[j];
        }
        let mut li = vec![0; lp[n]];
        let mut fill: Vec<usize> = lp[..n].to_vec();
        mark.iter_mut().for_each(|m| *m = 0);
        for k in 0..n {
            li[fill[k]] = k;
            fill[k] += 1;
            let top = ereach(&cp, &ci, &parent, k, &mut stack, &mut mark);
            for &i in &stack[top..] {
                li[fill[i]] = k;
                fill[i] += 1;
            }
        }

        // Fundamental supernodes: a column continues its predecessor's
        // supernode when it is the parent and its pattern is the rest of it.
        let mut sn_ptr = vec![0];
        let mut sn_of = vec![0; n];
        for j in 0..n {
            let joins = j > 0 && parent[j - 1] == j && colcount[j] + 1 == colcount[j - 1];
            if !joins && j > 0 {
                sn_ptr.push(j);
            }
            sn_of[j] = sn_ptr.len() - 1;
        }
        if n > 0 {
            sn_ptr.push(n);
        }
        let n_sn = sn_ptr.len().saturating_sub(1);
        let mut sn_offset = vec![0; n_sn + 1];
        for s in 0..n_sn {
            let f = sn_ptr[s];
            sn_offset[s + 1] = sn_offset[s] + colcount[f] * (sn_ptr[s + 1] - f);
        }
        let mut sn_map = vec![0; ci.len()];
        for k in 0..n {
            for p in cp[k]..cp[k + 1] {
                let i = ci[p];
                let s = sn_of[i];
                let f = sn_ptr[s];
                let rows = &li[lp[f]..lp[f + 1]];
                let pos = rows.binary_search(&k).expect("entry of Q lies in the pattern of L");
                sn_map[p] = sn_offset[s] + (i - f) * rows.len() + pos;
            }
        }

        Self {
            inner: Arc::new(SymbolicInner {
                n,
                perm,
                iperm,
                value_map,
                in_col_ptr: q.col_ptr().to_vec(),
                in_row_idx: q.row_idx().to_vec(),
                lp,
                li,
                sn_ptr,
                sn_of,
                sn_offset,
                sn_map,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.n
    }

    /// Stored entries of `L`, diagonal included.
    pub fn nnz_l(&self) -> usize {
        self.inner.li.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.inner.perm
    }

    pub fn iperm(&self) -> &[usize] {
        &self.inner.iperm
    }

    pub(crate) fn l_col_ptr(&self) -> &[usize] {
        &self.inner.lp
    }

    pub(crate) fn l_row_idx(&self) -> &[usize] {
        &self.inner.li
    }

    /// True when `q` has exactly the pattern this analysis was built for.
    pub fn matches(&self, q: &SparseSymMatrix) -> bool {
        q.dim() == self.inner.n
            && q.col_ptr() == self.inner.in_col_ptr.as_slice()
            && q.row_idx() == self.inner.in_row_idx.as_slice()
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factor(&self, q: &SparseSymMatrix) -> Result<CholeskyFactor> {
        if !self.matches(q) {
            return Err(Error::InvalidDimension(
                "matrix pattern differs from the symbolic analysis".into(),
            ));
        }
        let s = &*self.inner;
        let mut bx = vec![0.0; *s.sn_offset.last().unwrap_or(&0)];
        for (idx, &v) in q.values().iter().enumerate() {
            bx[s.sn_map[s.value_map[idx]]] += v;
        }
        let n_sn = s.sn_ptr.len().saturating_sub(1);
        let mut work = Vec::new();
        let mut rel = Vec::new();
        for sn in 0..n_sn {
            let (f, l) = (s.sn_ptr[sn], s.sn_ptr[sn + 1]);
            let w = l - f;
            let rows = &s.li[s.lp[f]..s.lp[f + 1]];
            let nr = rows.len();
            let (head, tail) = bx.split_at_mut(s.sn_offset[sn + 1]);
            let panel = &mut head[s.sn_offset[sn]..];
            factor_panel(panel, nr, w).map_err(|(c, pivot)| Error::NotPositiveDefinite { column: s.perm[f + c], pivot })?;

            // Update every later supernode touched by the rows below the
            // diagonal block with -B Bᵀ.
            let nb = nr - w;
            if nb == 0 {
                continue;
            }
            let below = &rows[w..];
            let base = s.sn_offset[sn + 1];
            let bpanel = &panel[w..];
            let mut a0 = 0;
            while a0 < nb {
                let t = s.sn_of[below[a0]];
                let ft = s.sn_ptr[t];
                let lt = s.sn_ptr[t + 1];
                let mut a1 = a0;
                while a1 < nb && below[a1] < lt {
                    a1 += 1;
                }
                // work = B[a0.., :] · B[a0..a1, :]ᵀ, the block of B Bᵀ that
                // lands in supernode t.
                let (m, k) = (nb - a0, a1 - a0);
                work.clear();
                work.resize(m * k, 0.0);
                // SAFETY: `bpanel` holds nb rows with column stride nr over w
                // columns and `work` is m × k column-major; every index used
                // by these strides lies inside the two buffers.
                unsafe {
                    let b = bpanel.as_ptr().add(a0);
                    matrixmultiply::dgemm(
                        m, w, k, 1.0, b, 1, nr as isize, b, nr as isize, 1, 0.0, work.as_mut_ptr(), 1, m as isize,
                    );
                }
                let trows = &s.li[s.lp[ft]..s.lp[ft + 1]];
                rel.clear();
                let mut pos = 0;
                for &r in &below[a0..] {
                    while trows[pos] != r {
                        pos += 1;
                    }
                    rel.push(pos);
                }
                let nrt = trows.len();
                let target = &mut tail[s.sn_offset[t] - base..s.sn_offset[t + 1] - base];
                for a in a0..a1 {
                    let col = &mut target[(below[a] - ft) * nrt..];
                    let src = &work[(a - a0) * m..(a - a0 + 1) * m];
                    for b in a - a0..m {
                        col[rel[b]] -= src[b];
                    }
                }
                a0 = a1;
            }
        }

        let mut lx = vec![0.0; s.li.len()];
        for sn in 0..n_sn {
            let (f, l) = (s.sn_ptr[sn], s.sn_ptr[sn + 1]);
            let nr = s.lp[f + 1] - s.lp[f];
            for c in 0..l - f {
                let src = s.sn_offset[sn] + c * nr + c;
                let j = f + c;
                lx[s.lp[j]..s.lp[j + 1]].copy_from_slice(&bx[src..src + nr - c]);
            }
        }
        Ok(CholeskyFactor { symbolic: self.clone(), lx, matrix: q.clone() })
    }
}

/// In-place dense Cholesky of the `w` leading columns of an `nr × w`
/// column-major panel whose top `w × w` block is the diagonal block. On a
/// non-positive pivot returns its local column and value.
fn factor_panel(panel: &mut [f64], nr: usize, w: usize) -> std::result::Result<(), (usize, f64)> {
    for c in 0..w {
        let (done, rest) = panel.split_at_mut(c * nr);
        let col = &mut rest[c..nr];
        for k in 0..c {
            let src = &done[k * nr + c..k * nr + nr];
            let m = src[0];
            if m != 0.0 {
                for (x, y) in col.iter_mut().zip(src) {
                    *x -= m * y;
                }
            }
        }
        let d = col[0];
        if !(d > 0.0) || !d.is_finite() {
            return Err((c, d));
        }
        let r = d.sqrt();
        col[0] = r;
        let inv = 1.0 / r;
        for x in &mut col[1..] {
            *x *= inv;
        }
    }
    Ok(())
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.symbolic.dim()
    }

    pub fn symbolic(&self) -> &SymbolicCholesky {
        &self.symbolic
    }

    /// The matrix that was factorized.
    pub fn matrix(&self) -> &SparseSymMatrix {
        &self.matrix
    }

    pub(crate) fn l_values(&self) -> &[f64] {
        &self.lx
    }

    /// Entries of `L` as `(row, col, value)` in permuted indexing.
    pub fn l_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let (lp, li) = (self.symbolic.l_col_ptr(), self.symbolic.l_row_idx());
        (0..self.dim()).flat_map(move |j| (lp[j]..lp[j + 1]).map(move |p| (li[p], j, self.lx[p])))
    }

    /// `log |Q| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        let lp = self.symbolic.l_col_ptr();
        (0..self.dim()).map(|j| self.lx[lp[j]].ln()).sum::<f64>() * 2.0
    }

    /// Solve `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let perm = self.symbolic.perm();
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; n];
        for (new, &old) in perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// `x = Pᵀ L⁻ᵀ z`; for standard-normal `z` this draws from `N(0, Q⁻¹)`.
    pub fn solve_lt(&self, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if z.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: z.len() });
        }
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; n];
        for (new, &old) in self.symbolic.perm().iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// `‖Lᵀ P x‖² = xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        self.matrix.quad_form(x)
    }

    fn forward(&self, y: &mut [f64]) {
        let (lp, li) = (self.symbolic.l_col_ptr(), self.symbolic.l_row_idx());
        for j in 0..self.dim() {
            y[j] /= self.lx[lp[j]];
            let yj = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                y[li[p]] -= self.lx[p] * yj;
            }
        }
    }

    fn backward(&self, y: &mut [f64]) {
        let (lp, li) = (self.symbolic.l_col_ptr(), self.symbolic.l_row_idx());
        for j in (0..self.dim()).rev() {
            let mut acc = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                acc -= self.lx[p] * y[li[p]];
            }
            y[j] = acc / self.lx[lp[j]];
        }
    }

    /// Entries of `Q⁻¹` on the pattern of `L` (Takahashi recursions).
    pub fn selected_inverse(&self) -> SelectedInverse {
        SelectedInverse::compute(self)
    }

    /// Diagonal of `Q⁻¹`.
    pub fn marginal_variances(&self) -> Vec<f64> {
        self.selected_inverse().diagonal()
    }

    /// Column `j` of `Q⁻¹` by a direct solve.
    pub fn inverse_column(&self, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[j] = 1.0;
        self.solve(&e).expect("dimension matches")
    }
}
