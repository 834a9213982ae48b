//! CART regression forest with bootstrap resampling, per-split feature
//! subsampling and out-of-bag error.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative tolerance under which two split gains count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `max(1, ⌊p/3⌋)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// Draw a bootstrap sample per tree (off: every tree sees all rows once).
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 500, mtry: None, min_leaf: 5, max_depth: None, seed: 0, bootstrap: true }
    }
}

/// Column-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    n_rows: usize,
    cols: Vec<Vec<f64>>,
}

impl Features {
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = cols.first().map(Vec::len).unwrap_or(0);
        if let Some(c) = cols.iter().find(|c| c.len() != n_rows) {
            return Err(Error::DimensionMismatch { expected: n_rows, got: c.len() });
        }
        Ok(Self { n_rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map(Vec::len).unwrap_or(0);
        let mut cols = vec![Vec::with_capacity(rows.len()); p];
        for r in rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: r.len() });
            }
            for (c, v) in cols.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        Ok(Self { n_rows: rows.len(), cols })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cols[col][row]
    }

    /// Keep only the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            n_rows: rows.len(),
            cols: self.cols.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Reduction in the node's sum of squared deviations.
    pub gain: f64,
}

/// Variance-reducing split of `rows` (repeats allowed) over `features`.
///
/// Thresholds sit midway between consecutive distinct values. Among equal
/// gains the lowest feature index wins, then the lowest threshold. Returns
/// `None` when no split leaves `min_leaf` rows on each side while reducing
/// the squared error.
pub fn best_split(x: &Features, y: &[f64], rows: &[usize], features: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let parent = total * total / n as f64;
    let sse: f64 = rows.iter().map(|&r| y[r] * y[r]).sum::<f64>() - parent;
    let floor = TIE_TOL * sse.abs().max(f64::MIN_POSITIVE);
    let mut feats = features.to_vec();
    feats.sort_unstable();
    let mut best: Option<Split> = None;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for &f in &feats {
        let col = x.column(f);
        order.clear();
        order.extend_from_slice(rows);
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut left = 0.0;
        for k in 0..n - 1 {
            left += y[order[k]];
            let nl = k + 1;
            let (xa, xb) = (col[order[k]], col[order[k + 1]]);
            if nl < min_leaf || n - nl < min_leaf || xa == xb {
                continue;
            }
            let right = total - left;
            let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - parent;
            if gain <= floor {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => gain > b.gain + TIE_TOL * b.gain.abs(),
            };
            if better {
                best = Some(Split { feature: f, threshold: 0.5 * (xa + xb), gain });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &Features, row: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    k = if x.get(row, feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

struct TreeBuilder<'a> {
    x: &'a Features,
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    tree_key: u64,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// Feature subsets are drawn from a stream keyed by the node's position
    /// in the tree, so a changed split upstream does not reshuffle the draws
    /// of unrelated branches.
    fn grow(&mut self, rows: Vec<usize>, depth: usize, key: u64) -> usize {
        let id = self.nodes.len();
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if self.cfg.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let p = self.x.n_cols();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.tree_key ^ key));
        let feats = sample(&mut rng, p, self.mtry).into_vec();
        let Some(split) = best_split(self.x, self.y, &rows, &feats, self.cfg.min_leaf) else {
            return id;
        };
        let col = self.x.column(split.feature);
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= split.threshold);
        drop(rows);
        let left = self.grow(l, depth + 1, splitmix64(key.wrapping_mul(2)));
        let right = self.grow(r, depth + 1, splitmix64(key.wrapping_mul(2).wrapping_add(1)));
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestFit {
    pub trees: Vec<Tree>,
    /// OOB prediction; rows never out of bag carry the full ensemble
    /// prediction instead.
    pub oob_pred: Vec<f64>,
    /// Number of trees for which each row was out of bag.
    pub oob_votes: Vec<u32>,
    /// Mean squared OOB error over rows with at least one vote; `NaN` if
    /// there are none.
    pub oob_mse: f64,
    n_features: usize,
}

pub fn fit_forest(x: &Features, y: &[f64], cfg: &ForestConfig) -> Result<ForestFit> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("forest needs at least 2 rows, got {n}")));
    }
    if p == 0 {
        return Err(Error::DegenerateInput("forest needs at least one feature".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::InvalidParameter("n_trees and min_leaf must be at least 1".into()));
    }
    let mtry = cfg.mtry.unwrap_or((p / 3).max(1));
    if mtry == 0 || mtry > p {
        return Err(Error::InvalidParameter(format!("mtry must lie in 1..={p}, got {mtry}")));
    }

    let grown: Vec<(Tree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let mut in_bag = vec![!cfg.bootstrap; n];
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n)
                    .map(|_| {
                        let r = rng.random_range(0..n);
                        in_bag[r] = true;
                        r
                    })
                    .collect()
            } else {
                (0..n).collect()
            };
            let tree_key = rng.random::<u64>();
            let mut b = TreeBuilder { x, y, cfg, mtry, tree_key, nodes: Vec::new() };
            b.grow(rows, 0, 1);
            (Tree { nodes: b.nodes }, in_bag)
        })
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_votes = vec![0u32; n];
    for (tree, in_bag) in &grown {
        for i in 0..n {
            if !in_bag[i] {
                oob_sum[i] += tree.predict_row(x, i);
                oob_votes[i] += 1;
            }
        }
    }
    let trees: Vec<Tree> = grown.into_iter().map(|(t, _)| t).collect();
    let mut fit = ForestFit { trees, oob_pred: vec![0.0; n], oob_votes, oob_mse: f64::NAN, n_features: p };
    let (mut se, mut cnt) = (0.0, 0usize);
    for i in 0..n {
        if fit.oob_votes[i] > 0 {
            fit.oob_pred[i] = oob_sum[i] / fit.oob_votes[i] as f64;
            se += (fit.oob_pred[i] - y[i]).powi(2);
            cnt += 1;
        } else {
            fit.oob_pred[i] = fit.predict_row(x, i);
        }
    }
    if cnt > 0 {
        fit.oob_mse = se / cnt as f64;
    }
    Ok(fit)
}

impl ForestFit {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, x: &Features, row: usize) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x, row)).sum::<f64>() / self.trees.len() as f64
    }

    /// Ensemble mean prediction.
    pub fn predict(&self, x: &Features) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: x.n_cols() });
        }
        Ok((0..x.n_rows()).into_par_iter().map(|r| self.predict_row(x, r)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(col: Vec<f64>) -> Features {
        Features::from_columns(vec![col]).unwrap()
    }

    #[test]
    fn step_function_split() {
        let x = single(vec![1.0, 2.0, 3.0, 4.0]);
        let s = best_split(&x, &[0.0, 0.0, 10.0, 10.0], &[0, 1, 2, 3], &[0], 1).unwrap();
        assert_eq!((s.feature, s.threshold), (0, 2.5));
        assert!(best_split(&x, &[3.0; 4], &[0, 1, 2, 3], &[0], 1).is_none());
    }

    #[test]
    fn ties_go_to_lowest_feature_then_threshold() {
        let c = vec![1.0, 2.0, 3.0, 4.0];
        let x = Features::from_columns(vec![c.clone(), c]).unwrap();
        let s = best_split(&x, &[0.0, 0.0, 10.0, 10.0], &[0, 1, 2, 3], &[1, 0], 1).unwrap();
        assert_eq!(s.feature, 0);
        // Symmetric response: splits at 1.5 and 3.5 tie.
        let s = best_split(&x, &[0.0, 5.0, 5.0, 0.0], &[0, 1, 2, 3], &[0], 1).unwrap();
        assert_eq!(s.threshold, 1.5);
    }

    #[test]
    fn min_leaf_respected() {
        let x = single(vec![1.0, 2.0, 3.0, 4.0]);
        assert!(best_split(&x, &[0.0, 0.0, 0.0, 10.0], &[0, 1, 2, 3], &[0], 2).is_some());
        let s = best_split(&x, &[0.0, 0.0, 0.0, 10.0], &[0, 1, 2, 3], &[0], 2).unwrap();
        assert_eq!(s.threshold, 2.5);
    }

    #[test]
    fn constant_response() {
        let x = single((0..20).map(f64::from).collect());
        let f = fit_forest(&x, &[1.5; 20], &ForestConfig { n_trees: 20, ..Default::default() }).unwrap();
        assert_eq!(f.oob_mse, 0.0);
        assert!(f.predict(&x).unwrap().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn stump_predicts_training_mean() {
        let x = single(vec![0.0, 1.0, 2.0, 3.0]);
        let cfg = ForestConfig { n_trees: 1, min_leaf: 4, bootstrap: false, ..Default::default() };
        let f = fit_forest(&x, &[1.0, 2.0, 3.0, 6.0], &cfg).unwrap();
        assert!(f.predict(&single(vec![-5.0, 10.0])).unwrap().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn full_tree_interpolates() {
        let xs: Vec<f64> = (0..30).map(|i| (i as f64 * 1.7).sin()).collect();
        let ys: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).cos() * 4.0).collect();
        let x = single(xs);
        let cfg = ForestConfig { n_trees: 1, min_leaf: 1, mtry: Some(1), bootstrap: false, ..Default::default() };
        let f = fit_forest(&x, &ys, &cfg).unwrap();
        let p = f.predict(&x).unwrap();
        for (a, b) in p.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| (v / 10.0).sin()).collect();
        let x = single(xs);
        let cfg = ForestConfig { n_trees: 30, seed: 9, ..Default::default() };
        let a = fit_forest(&x, &ys, &cfg).unwrap();
        let b = fit_forest(&x, &ys, &cfg).unwrap();
        assert_eq!(a, b);
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(a.predict(&x).unwrap().iter().all(|&v| v >= lo && v <= hi));
        assert!(a.predict(&Features::from_columns(vec![vec![1.0], vec![2.0]]).unwrap()).is_err());
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            fit_forest(&single(vec![1.0]), &[1.0], &ForestConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }
}
