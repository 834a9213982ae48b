//! Simulation studies, the GMRF sampler and dataset CSV I/O.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::matern_covariance;
use crate::sparse::{cholesky, CholeskyFactor, SparseSymMatrix};

/// Row role: training, held out, or a CV block id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitLabel {
    Train,
    Test,
    Block(u32),
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Train => write!(f, "train"),
            Self::Test => write!(f, "test"),
            Self::Block(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for SplitLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => s.parse().map(Self::Block).map_err(|_| Error::Parse(format!("bad split label {s:?}"))),
        }
    }
}

/// Observations with coordinates, time index (1-based), covariates, split
/// labels and the generating linear predictor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StDataset {
    pub x: Vec<f64>,
    pub y_coord: Vec<f64>,
    pub t: Vec<usize>,
    pub response: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub cat: Vec<u8>,
    pub split: Vec<SplitLabel>,
    pub eta_true: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    x: f64,
    y_coord: f64,
    t: usize,
    response: f64,
    z1: f64,
    z2: f64,
    cat: u8,
    split: String,
    eta_true: f64,
}

impl StDataset {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn n_times(&self) -> usize {
        self.t.iter().copied().max().unwrap_or(0)
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.x.iter().zip(&self.y_coord).map(|(&a, &b)| [a, b]).collect()
    }

    pub fn rows_with(&self, label: SplitLabel) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == label).collect()
    }

    /// Keep only the listed rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        fn pick<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
            rows.iter().map(|&r| v[r]).collect()
        }
        Self {
            x: pick(&self.x, rows),
            y_coord: pick(&self.y_coord, rows),
            t: pick(&self.t, rows),
            response: pick(&self.response, rows),
            z1: pick(&self.z1, rows),
            z2: pick(&self.z2, rows),
            cat: pick(&self.cat, rows),
            split: pick(&self.split, rows),
            eta_true: pick(&self.eta_true, rows),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for i in 0..self.len() {
            wr.serialize(CsvRow {
                x: self.x[i],
                y_coord: self.y_coord[i],
                t: self.t[i],
                response: self.response[i],
                z1: self.z1[i],
                z2: self.z2[i],
                cat: self.cat[i],
                split: self.split[i].to_string(),
                eta_true: self.eta_true[i],
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut d = Self::default();
        for rec in rd.deserialize() {
            let row: CsvRow = rec?;
            if !(1..=3).contains(&row.cat) {
                return Err(Error::Parse(format!("category must be 1, 2 or 3, got {}", row.cat)));
            }
            if row.t == 0 {
                return Err(Error::Parse("time index is 1-based".into()));
            }
            d.x.push(row.x);
            d.y_coord.push(row.y_coord);
            d.t.push(row.t);
            d.response.push(row.response);
            d.z1.push(row.z1);
            d.z2.push(row.z2);
            d.cat.push(row.cat);
            d.split.push(row.split.parse()?);
            d.eta_true.push(row.eta_true);
        }
        Ok(d)
    }
}

/// Draw `x ~ N(0, Q⁻¹)` from an existing factor.
pub fn sample_with_factor<R: Rng>(factor: &CholeskyFactor, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..factor.dim()).map(|_| rng.sample(StandardNormal)).collect();
    factor.solve_lt(&z).expect("length matches")
}

/// One draw from `N(0, Q⁻¹)` as `x = Pᵀ L⁻ᵀ z`.
pub fn sample_gmrf(q: &SparseSymMatrix, seed: u64) -> Result<Vec<f64>> {
    let f = cholesky(q)?;
    Ok(sample_with_factor(&f, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Lower Cholesky factor of a dense covariance, adding diagonal jitter
/// (starting at `jitter`, growing tenfold) until it factorizes.
fn dense_cholesky(mut cov: DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let scale = (0..n).map(|i| cov[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut eps = jitter * scale;
    let mut added = 0.0;
    for _ in 0..8 {
        for i in 0..n {
            cov[(i, i)] += eps - added;
        }
        added = eps;
        if let Some(c) = cov.clone().cholesky() {
            return Ok(c.l());
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite { column: 0, pivot: 0.0 })
}

/// Settings of the spatio-temporal study. Defaults reproduce the study
/// values; the square side is chosen so its diagonal is `2ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatioTemporalConfig {
    pub n_per_time: usize,
    pub n_times: usize,
    pub gamma: [f64; 3],
    pub sigma2: f64,
    pub rho: f64,
    pub sigma2_eps: f64,
    pub a: f64,
    pub side: f64,
    pub test_fraction: f64,
    /// Replace the nonlinear covariate effects by `z1 − 0.5·z2`.
    pub linear: bool,
    pub jitter: f64,
}

impl Default for SpatioTemporalConfig {
    fn default() -> Self {
        Self {
            n_per_time: 150,
            n_times: 8,
            gamma: [0.727, -1.027, 0.3],
            sigma2: 1.0,
            rho: 3.627,
            sigma2_eps: 0.02,
            a: 0.7,
            side: 2.0 * 3.627 / 2f64.sqrt(),
            test_fraction: 0.2,
            linear: false,
            jitter: 1e-8,
        }
    }
}

pub fn f1(z: f64) -> f64 {
    2.0 * z * (2.0 * z).sin()
}

pub fn f2(z: f64) -> f64 {
    z.powi(4).sin() + (2.5 * std::f64::consts::PI * z).cos()
}

/// AR(1)-in-time Matérn field plus covariate effects, locations redrawn
/// at every time point, with a shuffled train/test split.
pub fn simulate_spatiotemporal(cfg: &SpatioTemporalConfig, seed: u64) -> Result<StDataset> {
    if cfg.n_per_time == 0 || cfg.n_times == 0 {
        return Err(Error::InvalidParameter("need at least one location and one time".into()));
    }
    if !(cfg.a.abs() < 1.0) || !(cfg.sigma2 > 0.0) || !(cfg.rho > 0.0) || !(cfg.side > 0.0) {
        return Err(Error::InvalidParameter("invalid field parameters".into()));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) || !(cfg.sigma2_eps >= 0.0) {
        return Err(Error::InvalidParameter("invalid noise or split parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_per_time * cfg.n_times;
    let mut d = StDataset::default();
    for t in 0..cfg.n_times {
        for _ in 0..cfg.n_per_time {
            d.x.push(rng.random_range(0.0..cfg.side));
            d.y_coord.push(rng.random_range(0.0..cfg.side));
            d.t.push(t + 1);
        }
    }
    for _ in 0..n {
        d.z1.push(rng.sample(StandardNormal));
        d.z2.push(rng.random_range(0.0..1.0));
        d.cat.push(rng.random_range(1..=3u8));
    }

    let cov = DMatrix::from_fn(n, n, |i, j| {
        let h = (d.x[i] - d.x[j]).hypot(d.y_coord[i] - d.y_coord[j]);
        matern_covariance(h, cfg.sigma2, cfg.rho)
    });
    let l = dense_cholesky(cov, cfg.jitter)?;
    let mut omega_prev: Option<Vec<f64>> = None;
    let mut omega_rows = vec![0.0; n];
    for t in 0..cfg.n_times {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let xi = &l * nalgebra::DVector::from_vec(z);
        let omega: Vec<f64> = match &omega_prev {
            None => xi.iter().map(|v| v / (1.0 - cfg.a * cfg.a).sqrt()).collect(),
            Some(prev) => prev.iter().zip(xi.iter()).map(|(p, x)| cfg.a * p + x).collect(),
        };
        let block = t * cfg.n_per_time..(t + 1) * cfg.n_per_time;
        omega_rows[block.clone()].copy_from_slice(&omega[block]);
        omega_prev = Some(omega);
    }

    let noise = Normal::new(0.0, cfg.sigma2_eps.sqrt()).expect("finite sd");
    for i in 0..n {
        let smooth = if cfg.linear { d.z1[i] - 0.5 * d.z2[i] } else { f1(d.z1[i]) + f2(d.z2[i]) };
        let eta = smooth + cfg.gamma[(d.cat[i] - 1) as usize] + omega_rows[i];
        d.eta_true.push(eta);
        d.response.push(eta + noise.sample(&mut rng));
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_test = (cfg.test_fraction * n as f64).round() as usize;
    d.split = vec![SplitLabel::Train; n];
    for &i in &idx[..n_test] {
        d.split[i] = SplitLabel::Test;
    }
    Ok(d)
}

/// Settings of the temporal jump study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalJumpsConfig {
    pub n: usize,
    pub k_jumps: usize,
    pub beta0: f64,
    pub pi_s: f64,
    pub mu_w: f64,
    pub tau_w: f64,
    pub tau_ur: f64,
    pub tau_y: f64,
    /// Rows per segment; `None` means `⌊n / (k + 1)⌋`, the last segment
    /// taking the remainder.
    pub segment_len: Option<usize>,
    pub test_fraction: f64,
}

impl Default for TemporalJumpsConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            k_jumps: 10,
            beta0: 2.0,
            pi_s: 0.5,
            mu_w: 5.0,
            tau_w: 10.0,
            tau_ur: 20.0,
            tau_y: 20.0,
            segment_len: None,
            test_fraction: 0.0,
        }
    }
}

impl TemporalJumpsConfig {
    /// 0-based row index where each jump starts.
    pub fn jump_starts(&self) -> Vec<usize> {
        let seg = self.segment_len.unwrap_or(self.n / (self.k_jumps + 1));
        (1..=self.k_jumps).map(|j| j * seg).collect()
    }
}

/// Intercept, a piecewise-constant jump process and a first-order random
/// walk, observed with Gaussian noise. Time runs `1..=n`; coordinates and
/// covariates are zero.
pub fn simulate_temporal_jumps(cfg: &TemporalJumpsConfig, seed: u64) -> Result<StDataset> {
    let starts = cfg.jump_starts();
    if cfg.n < 2 || starts.last().is_some_and(|&s| s == 0 || s >= cfg.n) {
        return Err(Error::InvalidParameter(format!(
            "{} jumps do not fit in {} rows",
            cfg.k_jumps, cfg.n
        )));
    }
    if !(cfg.tau_w > 0.0 && cfg.tau_ur > 0.0 && cfg.tau_y > 0.0) || !(0.0..=1.0).contains(&cfg.pi_s) {
        return Err(Error::InvalidParameter("precisions must be positive and pi_s a probability".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = Normal::new(cfg.mu_w, (1.0 / cfg.tau_w).sqrt()).expect("finite sd");
    let w: Vec<f64> = (0..cfg.k_jumps)
        .map(|_| {
            let ws = if rng.random_bool(cfg.pi_s) { 1.0 } else { 0.0 };
            (ws - 0.5f64).signum() * mag.sample(&mut rng)
        })
        .collect();
    let step = Normal::new(0.0, (1.0 / cfg.tau_ur).sqrt()).expect("finite sd");
    let noise = Normal::new(0.0, (1.0 / cfg.tau_y).sqrt()).expect("finite sd");
    let mut d = StDataset::default();
    let mut ur = 0.0;
    let mut jump = 0.0;
    let mut next = 0;
    for i in 0..cfg.n {
        if i > 0 {
            ur += step.sample(&mut rng);
        }
        while next < starts.len() && starts[next] == i {
            jump += w[next];
            next += 1;
        }
        let eta = cfg.beta0 + jump + ur;
        d.eta_true.push(eta);
        d.response.push(eta + noise.sample(&mut rng));
        d.t.push(i + 1);
        d.x.push(0.0);
        d.y_coord.push(0.0);
        d.z1.push(0.0);
        d.z2.push(0.0);
        d.cat.push(1);
    }
    let mut idx: Vec<usize> = (0..cfg.n).collect();
    idx.shuffle(&mut rng);
    let n_test = (cfg.test_fraction * cfg.n as f64).round() as usize;
    d.split = vec![SplitLabel::Train; cfg.n];
    for &i in &idx[..n_test] {
        d.split[i] = SplitLabel::Test;
    }
    Ok(d)
}
