//! Fill-reducing ordering.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::SparseSymMatrix;

/// Minimum-degree ordering on the explicit elimination graph.
///
/// Returns `perm` with `perm[new] = old`. Ties go to the lowest original
/// index, so the result is deterministic. The elimination graph is kept
/// explicitly, which is fine at the latent dimensions used here (a few
/// thousand nodes).
pub fn minimum_degree(matrix: &SparseSymMatrix) -> Vec<usize> {
    let n = matrix.dim();
    let mut adj = matrix.adjacency();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // adj[u] ← (adj[u] ∪ nbrs) \ {u, v}
            merged.clear();
            let a = &adj[u];
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < nbrs.len() {
                let x = if i < a.len() { a[i] } else { usize::MAX };
                let y = if j < nbrs.len() { nbrs[j] } else { usize::MAX };
                let next = if x == y {
                    i += 1;
                    j += 1;
                    x
                } else if x < y {
                    i += 1;
                    x
                } else {
                    j += 1;
                    y
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    perm
}
