//! Predictive metrics and spatio-temporal block cross-validation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SplitLabel, StDataset};

/// Two-sided 95% Gaussian quantile used for CP and AIW.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    /// Share of observations inside `mean ± 1.96·sd`.
    pub cp: f64,
    /// Mean width `2·1.96·sd`.
    pub aiw: f64,
}

impl MetricReport {
    pub fn as_pairs(&self) -> [(&'static str, f64); 4] {
        [("rmse", self.rmse), ("mae", self.mae), ("cp", self.cp), ("aiw", self.aiw)]
    }

    /// Field-wise arithmetic mean.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport { rmse: sum(|r| r.rmse), mae: sum(|r| r.mae), cp: sum(|r| r.cp), aiw: sum(|r| r.aiw) })
    }
}

pub fn evaluate(y: &[f64], mean: &[f64], sd: &[f64]) -> Result<MetricReport> {
    let rows: Vec<usize> = (0..y.len()).collect();
    evaluate_rows(y, mean, sd, &rows)
}

/// Metrics over a subset of rows.
pub fn evaluate_rows(y: &[f64], mean: &[f64], sd: &[f64], rows: &[usize]) -> Result<MetricReport> {
    for len in [mean.len(), sd.len()] {
        if len != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: len });
        }
    }
    if rows.is_empty() {
        return Err(Error::DegenerateInput("no rows to evaluate".into()));
    }
    let (mut se, mut ae, mut inside, mut width) = (0.0, 0.0, 0usize, 0.0);
    for &r in rows {
        if r >= y.len() {
            return Err(Error::IndexOutOfRange { row: r, col: 0, dim: y.len() });
        }
        if !(sd[r] >= 0.0) {
            return Err(Error::InvalidParameter(format!("predictive sd must be non-negative, got {}", sd[r])));
        }
        let e = y[r] - mean[r];
        se += e * e;
        ae += e.abs();
        if e.abs() <= Z95 * sd[r] {
            inside += 1;
        }
        width += 2.0 * Z95 * sd[r];
    }
    let n = rows.len() as f64;
    Ok(MetricReport { rmse: (se / n).sqrt(), mae: ae / n, cp: inside as f64 / n, aiw: width / n })
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    for (c, ctr) in centers.iter().enumerate().skip(1) {
        if sq_dist(p, *ctr) < sq_dist(p, centers[best]) {
            best = c;
        }
    }
    best
}

/// Lloyd's algorithm from a k-means++ start. Labels lie in `0..k`.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut distinct: Vec<[u64; 2]> = points.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(Error::InvalidParameter(format!("k = {k} but only {} distinct points", distinct.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(*p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("a point off the centers exists");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(*p, c));
        }
    }

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(*p, &centers)).collect();
    for _ in 0..100 {
        let mut sum = vec![[0.0; 2]; k];
        let mut cnt = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sum[l][0] += p[0];
            sum[l][1] += p[1];
            cnt[l] += 1;
        }
        for c in 0..k {
            if cnt[c] > 0 {
                centers[c] = [sum[c][0] / cnt[c] as f64, sum[c][1] / cnt[c] as f64];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(*p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}

/// Per-row block id in `1..=n_blocks`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAssignment {
    pub block: Vec<u32>,
    pub n_blocks: u32,
}

impl BlockAssignment {
    pub fn rows_in(&self, b: u32) -> Vec<usize> {
        (0..self.block.len()).filter(|&i| self.block[i] == b).collect()
    }
}

/// `n_groups` contiguous, near-equal groups of the time indices `1..=n_times`.
pub fn contiguous_time_groups(n_times: usize, n_groups: usize) -> Result<Vec<Vec<usize>>> {
    if n_groups == 0 || n_groups > n_times {
        return Err(Error::InvalidParameter(format!("cannot split {n_times} times into {n_groups} groups")));
    }
    Ok((0..n_groups)
        .map(|g| (g * n_times / n_groups + 1..=(g + 1) * n_times / n_groups).collect())
        .collect())
}

/// Cluster the rows of each temporal group spatially; block
/// `g·k_spatial + c + 1` holds cluster `c` of group `g`.
pub fn st_blocks(data: &StDataset, groups: &[Vec<usize>], k_spatial: usize, seed: u64) -> Result<BlockAssignment> {
    let n_times = data.n_times();
    let mut group_of = vec![usize::MAX; n_times + 1];
    for (g, times) in groups.iter().enumerate() {
        for &t in times {
            if t == 0 || t > n_times || group_of[t] != usize::MAX {
                return Err(Error::InvalidParameter(format!("time {t} is out of range or in two groups")));
            }
            group_of[t] = g;
        }
    }
    if let Some(t) = (1..=n_times).find(|&t| group_of[t] == usize::MAX) {
        return Err(Error::InvalidParameter(format!("time {t} belongs to no group")));
    }
    let mut block = vec![0u32; data.len()];
    for g in 0..groups.len() {
        let rows: Vec<usize> = (0..data.len()).filter(|&r| group_of[data.t[r]] == g).collect();
        let pts: Vec<[f64; 2]> = rows.iter().map(|&r| [data.x[r], data.y_coord[r]]).collect();
        let labels = kmeans(&pts, k_spatial, seed.wrapping_add(g as u64))?;
        for (&r, l) in rows.iter().zip(labels) {
            block[r] = (g * k_spatial + l + 1) as u32;
        }
    }
    let n_blocks = (groups.len() * k_spatial) as u32;
    if let Some(b) = (1..=n_blocks).find(|b| !block.contains(b)) {
        return Err(Error::DegenerateInput(format!("block {b} is empty")));
    }
    Ok(BlockAssignment { block, n_blocks })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvFold {
    pub block: u32,
    pub train: MetricReport,
    pub test: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<CvFold>,
    pub mean_train: MetricReport,
    pub mean_test: MetricReport,
}

impl CvReport {
    /// `block_id,split,rmse,mae,cp,aiw`, with a final `mean` block.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["block_id", "split", "rmse", "mae", "cp", "aiw"])?;
        let mut row = |id: String, split: &str, m: &MetricReport| {
            wr.write_record([id, split.into(), m.rmse.to_string(), m.mae.to_string(), m.cp.to_string(), m.aiw.to_string()])
        };
        for f in &self.folds {
            row(f.block.to_string(), "train", &f.train)?;
            row(f.block.to_string(), "test", &f.test)?;
        }
        row("mean".into(), "train", &self.mean_train)?;
        row("mean".into(), "test", &self.mean_test)?;
        wr.flush()?;
        Ok(())
    }
}

/// Leave-one-block-out CV. `runner` receives a copy of `data` whose split
/// marks the held-out block as `Test` and everything else as `Train`, and
/// returns predictive `(mean, sd)` for every row. Folds run in parallel.
pub fn cv_run<F>(data: &StDataset, blocks: &BlockAssignment, runner: F) -> Result<CvReport>
where
    F: Fn(&StDataset) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
{
    if blocks.block.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), got: blocks.block.len() });
    }
    if blocks.n_blocks < 2 {
        return Err(Error::InvalidParameter("cross-validation needs at least two blocks".into()));
    }
    let folds: Vec<CvFold> = (1..=blocks.n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut fold = data.clone();
            fold.split = blocks.block.iter().map(|&k| if k == b { SplitLabel::Test } else { SplitLabel::Train }).collect();
            let test = fold.rows_with(SplitLabel::Test);
            let train = fold.rows_with(SplitLabel::Train);
            if train.is_empty() || test.is_empty() {
                return Err(Error::DegenerateInput(format!("fold {b} has an empty training or test set")));
            }
            let (mean, sd) = runner(&fold)?;
            Ok(CvFold {
                block: b,
                train: evaluate_rows(&data.response, &mean, &sd, &train)?,
                test: evaluate_rows(&data.response, &mean, &sd, &test)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean_train = MetricReport::mean(&folds.iter().map(|f| f.train).collect::<Vec<_>>()).expect("folds exist");
    let mean_test = MetricReport::mean(&folds.iter().map(|f| f.test).collect::<Vec<_>>()).expect("folds exist");
    Ok(CvReport { folds, mean_train, mean_test })
}
