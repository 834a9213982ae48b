//! Selected inversion: the entries of `Q⁻¹` on the pattern of its Cholesky
//! factor, via the Takahashi recursions
//!
//! ```text
//! Σ_ij = −(1/L_jj) Σ_{k∈R_j} L_kj Σ_ik              (i ∈ R_j)
//! Σ_jj = 1/L_jj² − (1/L_jj) Σ_{k∈R_j} L_kj Σ_kj
//! ```
//!
//! where `R_j` is the off-diagonal pattern of column `j` of `L`. The pattern
//! of `L` is closed under these recursions, so no entry outside it is ever
//! needed.

use super::{CholeskyFactor, SymbolicCholesky};

#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: SymbolicCholesky,
    /// `Σ` in permuted coordinates, aligned with the pattern of `L`.
    values: Vec<f64>,
}

impl SelectedInverse {
    pub fn compute(factor: &CholeskyFactor) -> Self {
        let sym = factor.symbolic().clone();
        let n = sym.dim();
        let (lp, li) = (sym.l_col_ptr(), sym.l_row_idx());
        let lx = factor.l_values();
        let mut sv = vec![0.0; lx.len()];
        let mut w = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];

        for j in (0..n).rev() {
            let ljj = lx[lp[j]];
            let col = lp[j] + 1..lp[j + 1];
            for p in col.clone() {
                w[li[p]] = lx[p];
                mark[li[p]] = j;
            }
            for p in col.clone() {
                let k = li[p];
                let lkj = w[k];
                // Column k of Σ holds Σ(r, k) for r ≥ k.
                let sk = lp[k];
                acc[k] += lkj * sv[sk];
                for q in sk + 1..lp[k + 1] {
                    let r = li[q];
                    if mark[r] == j {
                        acc[r] += lkj * sv[q];
                        acc[k] += w[r] * sv[q];
                    }
                }
            }
            let mut diag_acc = 0.0;
            for p in col.clone() {
                let r = li[p];
                sv[p] = -acc[r] / ljj;
                diag_acc += lx[p] * sv[p];
            }
            sv[lp[j]] = 1.0 / (ljj * ljj) - diag_acc / ljj;
            for p in col {
                acc[li[p]] = 0.0;
            }
        }
        Self { symbolic: sym, values: sv }
    }

    /// `(Q⁻¹)_ij` in original indexing, when `(i, j)` lies on the factor
    /// pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let iperm = self.symbolic.iperm();
        let (a, b) = (iperm[i], iperm[j]);
        let (r, c) = (a.max(b), a.min(b));
        let lp = self.symbolic.l_col_ptr();
        let rows = &self.symbolic.l_row_idx()[lp[c]..lp[c + 1]];
        rows.binary_search(&r).ok().map(|k| self.values[lp[c] + k])
    }

    /// Diagonal of `Q⁻¹` in original order.
    pub fn diagonal(&self) -> Vec<f64> {
        let lp = self.symbolic.l_col_ptr();
        let mut out = vec![0.0; self.symbolic.dim()];
        for (new, &old) in self.symbolic.perm().iter().enumerate() {
            out[old] = self.values[lp[new]];
        }
        out
    }
}
