//! Iterative coupling of the LGM with a random-forest residual learner:
//! offset correction (RF1), stress-point latent correction (RF2) and the
//! Kullback–Leibler stopping rules.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, Features, ForestConfig, ForestFit};
use crate::lgm::{fit, sigma_entry, EffectModel, FitOptions, IidPrecision, LgmFit, LgmSpec};
use crate::sim::{SplitLabel, StDataset};
use crate::sparse::{cholesky, CholeskyFactor, SelectedInverse, SparseMatrix, SparseSymMatrix};

/// Name given to the correction effect appended by RF2.
pub const CORRECTION_EFFECT: &str = "stress_correction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rf1,
    Rf2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KldVariant {
    /// Full conditional posterior at the hyperparameter mode.
    ConditionalMv,
    /// Mean of the per-node marginal divergences.
    MarginalAvg,
    /// Largest per-node marginal divergence.
    MarginalMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressSelection {
    LatentMarginalVariance,
    LinearPredictorRmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub algorithm: Algorithm,
    /// RF1 only: inflate the observation variance by the OOB error.
    pub propagate_uncertainty: bool,
    pub delta: f64,
    pub max_iter: usize,
    pub kld_variant: KldVariant,
    pub k_stress: usize,
    pub selection: StressSelection,
    /// Effect whose nodes RF2 corrects; `None` picks the first effect.
    pub target_effect: Option<String>,
    pub fit: FitOptions,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Rf1,
            propagate_uncertainty: false,
            delta: 0.01,
            max_iter: 30,
            kld_variant: KldVariant::ConditionalMv,
            k_stress: 100,
            selection: StressSelection::LatentMarginalVariance,
            target_effect: None,
            fit: FitOptions::default(),
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// `None` for the base fit.
    pub d_kl: Option<f64>,
    pub sigma2_rf: f64,
    pub train_rmse: f64,
    pub optim_iterations: usize,
}

/// RF2 correction state. `nodes` are local indices in the target effect.
#[derive(Debug, Clone)]
pub struct StressCorrection {
    pub effect: usize,
    pub nodes: Vec<usize>,
    /// Position of each node in the latent vector.
    pub latent_index: Vec<usize>,
    /// Row that loads most on each node, if any.
    pub rows: Vec<Option<usize>>,
    pub mu_c: Vec<f64>,
    pub tau_c: f64,
}

#[derive(Debug, Clone)]
pub struct HybridResult {
    pub base_fit: LgmFit,
    pub final_fit: LgmFit,
    /// Hybrid predictive mean and variance for every row.
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
    /// Posterior variance of the fitted value `ŷ` (no observation noise).
    /// RF1 adds `σ²_RF` when propagating.
    pub fitted_var: Vec<f64>,
    /// Last RF correction on the row scale (RF1) or at the stress nodes (RF2).
    pub e_rf: Vec<f64>,
    pub sigma2_rf: f64,
    pub trace: Vec<TraceRecord>,
    pub rf_last: ForestFit,
    pub corrections: Option<StressCorrection>,
    pub converged: bool,
}

impl HybridResult {
    pub fn pred_sd(&self) -> Vec<f64> {
        self.pred_var.iter().map(|v| v.sqrt()).collect()
    }

    pub fn fitted_sd(&self) -> Vec<f64> {
        self.fitted_var.iter().map(|v| v.sqrt()).collect()
    }

    /// Number of STEP 1 refits performed.
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

/// `½[log(v₁/v₀) + v₀/v₁ + (m₁−m₀)²/v₁ − 1]`.
pub fn kld_gaussian_uv(m0: f64, v0: f64, m1: f64, v1: f64) -> Result<f64> {
    if !(v0 > 0.0 && v1 > 0.0) {
        return Err(Error::InvalidParameter(format!("variances must be positive, got {v0} and {v1}")));
    }
    Ok((0.5 * ((v1 / v0).ln() + v0 / v1 + (m1 - m0).powi(2) / v1 - 1.0)).max(0.0))
}

fn uv_all(m0: &[f64], v0: &[f64], m1: &[f64], v1: &[f64]) -> Result<Vec<f64>> {
    let n = m0.len();
    for len in [v0.len(), m1.len(), v1.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    (0..n).map(|i| kld_gaussian_uv(m0[i], v0[i], m1[i], v1[i])).collect()
}

/// Mean univariate divergence over all nodes.
pub fn kld_marginal_avg(m0: &[f64], v0: &[f64], m1: &[f64], v1: &[f64]) -> Result<f64> {
    if m0.is_empty() {
        return Err(Error::InvalidDimension("no nodes".into()));
    }
    Ok(uv_all(m0, v0, m1, v1)?.iter().sum::<f64>() / m0.len() as f64)
}

/// Largest univariate divergence over `subset` (all nodes when `None`).
pub fn kld_marginal_max(m0: &[f64], v0: &[f64], m1: &[f64], v1: &[f64], subset: Option<&[usize]>) -> Result<f64> {
    let all = uv_all(m0, v0, m1, v1)?;
    match subset {
        None => Ok(all.iter().copied().fold(0.0, f64::max)),
        Some(s) => s.iter().try_fold(0.0f64, |acc, &i| {
            all.get(i).map(|v| acc.max(*v)).ok_or(Error::IndexOutOfRange { row: i, col: 0, dim: all.len() })
        }),
    }
}

/// Divergence of `N(μ₀, Q₀⁻¹)` from `N(μ₁, Q₁⁻¹)`:
/// `½[(μ₁−μ₀)ᵀQ₁(μ₁−μ₀) + tr(Q₁Q₀⁻¹) − J − log(|Q₁|/|Q₀|)]`.
pub fn kld_gaussian_mv(mu0: &[f64], f0: &CholeskyFactor, mu1: &[f64], f1: &CholeskyFactor) -> Result<f64> {
    kld_gaussian_mv_with(mu0, f0, &f0.selected_inverse(), mu1, f1)
}

/// As [`kld_gaussian_mv`], reusing the selected inverse of `Q₀`. The trace
/// only needs `Σ₀` on the pattern of `Q₁`; entries outside the selected
/// inverse come from column solves.
pub fn kld_gaussian_mv_with(
    mu0: &[f64],
    f0: &CholeskyFactor,
    sel0: &SelectedInverse,
    mu1: &[f64],
    f1: &CholeskyFactor,
) -> Result<f64> {
    let j = f0.dim();
    for got in [f1.dim(), mu0.len(), mu1.len()] {
        if got != j {
            return Err(Error::DimensionMismatch { expected: j, got });
        }
    }
    let q1 = f1.matrix();
    let d: Vec<f64> = mu1.iter().zip(mu0).map(|(a, b)| a - b).collect();
    let quad = q1.quad_form(&d)?;
    let mut cols: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut trace = 0.0;
    for (r, c, v) in q1.iter() {
        let s = match sel0.get(r, c) {
            Some(s) => s,
            None => cols.entry(c).or_insert_with(|| f0.inverse_column(c))[r],
        };
        trace += if r == c { v * s } else { 2.0 * v * s };
    }
    let log_ratio = f1.log_det() - f0.log_det();
    Ok((0.5 * (quad + trace - j as f64 - log_ratio)).max(0.0))
}

/// Precision of the leading `keep` coordinates after integrating out the
/// rest: `Q_xx − Q_xc Q_cc⁻¹ Q_cx`.
pub fn marginal_precision(q: &SparseSymMatrix, keep: usize) -> Result<SparseSymMatrix> {
    let n = q.dim();
    if keep == 0 || keep > n {
        return Err(Error::InvalidDimension(format!("cannot keep {keep} of {n} coordinates")));
    }
    if keep == n {
        return Ok(q.clone());
    }
    let m = n - keep;
    let mut qcc = DMatrix::zeros(m, m);
    let mut qxc: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut trip = Vec::with_capacity(q.nnz());
    for (r, c, v) in q.iter() {
        match (r >= keep, c >= keep) {
            (true, true) => {
                qcc[(r - keep, c - keep)] = v;
                qcc[(c - keep, r - keep)] = v;
            }
            (true, false) => qxc[r - keep].push((c, v)),
            (false, true) => qxc[c - keep].push((r, v)),
            (false, false) => trip.push((r, c, v)),
        }
    }
    let w = qcc
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { column: keep, pivot: f64::NAN })?
        .inverse();
    for a in 0..m {
        for b in 0..m {
            let wab = w[(a, b)];
            if wab == 0.0 {
                continue;
            }
            for &(xa, va) in &qxc[a] {
                for &(xb, vb) in &qxc[b] {
                    if xa >= xb {
                        trip.push((xa, xb, -va * wab * vb));
                    }
                }
            }
        }
    }
    SparseSymMatrix::from_triplets(keep, &trip)
}

/// Divergence between consecutive fits. When the current fit has extra
/// trailing latents (the RF2 correction effect), they are integrated out
/// first so both sides describe the same field.
pub fn kld_between_fits(prev: &LgmFit, cur: &LgmFit, variant: KldVariant, subset: Option<&[usize]>) -> Result<f64> {
    let j = prev.mu.len();
    if cur.mu.len() < j {
        return Err(Error::DimensionMismatch { expected: j, got: cur.mu.len() });
    }
    match variant {
        KldVariant::ConditionalMv => {
            if cur.mu.len() == j {
                kld_gaussian_mv_with(&prev.mu, &prev.factor, &prev.selected_inverse, &cur.mu, &cur.factor)
            } else {
                let marg = cholesky(&marginal_precision(cur.q_post(), j)?)?;
                kld_gaussian_mv_with(&prev.mu, &prev.factor, &prev.selected_inverse, &cur.mu[..j], &marg)
            }
        }
        KldVariant::MarginalAvg => {
            kld_marginal_avg(&prev.latent_mean, &prev.latent_var, &cur.latent_mean[..j], &cur.latent_var[..j])
        }
        KldVariant::MarginalMax => kld_marginal_max(
            &prev.latent_mean,
            &prev.latent_var,
            &cur.latent_mean[..j],
            &cur.latent_var[..j],
            subset,
        ),
    }
}

/// Response with non-training rows masked as missing.
pub fn training_response(data: &StDataset) -> Vec<f64> {
    data.response
        .iter()
        .zip(&data.split)
        .map(|(&y, s)| if *s == SplitLabel::Train { y } else { f64::NAN })
        .collect()
}

fn is_spatial(data: &StDataset) -> bool {
    let varies = |v: &[f64]| v.iter().any(|&a| a != v[0]);
    !data.is_empty() && (varies(&data.x) || varies(&data.y_coord))
}

/// RF1 features: the model covariates, the time index and the coordinates.
pub fn rf1_features(data: &StDataset) -> Features {
    Features::from_columns(vec![
        data.z1.clone(),
        data.z2.clone(),
        data.cat.iter().map(|&c| c as f64).collect(),
        data.t.iter().map(|&t| t as f64).collect(),
        data.x.clone(),
        data.y_coord.clone(),
    ])
    .expect("columns share the row count")
}

/// RF2 features: the time index, plus the coordinates when they vary.
pub fn rf2_features(data: &StDataset) -> Features {
    let mut cols = vec![data.t.iter().map(|&t| t as f64).collect()];
    if is_spatial(data) {
        cols.push(data.x.clone());
        cols.push(data.y_coord.clone());
    }
    Features::from_columns(cols).expect("columns share the row count")
}

fn rmse_on(y: &[f64], pred: &[f64], rows: &[usize]) -> f64 {
    (rows.iter().map(|&r| (y[r] - pred[r]).powi(2)).sum::<f64>() / rows.len().max(1) as f64).sqrt()
}

/// Fit the forest to `resid` on the training rows. Returns the forest and
/// its OOB error (in-sample error if no row was ever out of bag).
fn rf_on_residuals(train_x: &Features, resid: &[f64], cfg: &ForestConfig) -> Result<(ForestFit, f64)> {
    let forest = fit_forest(train_x, resid, cfg)?;
    let mut s2 = forest.oob_mse;
    if !s2.is_finite() {
        let pred = forest.predict(train_x)?;
        s2 = pred.iter().zip(resid).map(|(p, r)| (p - r).powi(2)).sum::<f64>() / resid.len() as f64;
    }
    Ok((forest, s2.max(1e-12)))
}

struct Prepared {
    y: Vec<f64>,
    train: Vec<usize>,
}

fn prepare(spec: &LgmSpec, data: &StDataset, cfg: &HybridConfig, algo: Algorithm) -> Result<Prepared> {
    cfg.validate()?;
    if cfg.algorithm != algo {
        return Err(Error::InvalidParameter(format!("configured for {:?}, called as {algo:?}", cfg.algorithm)));
    }
    if spec.n_obs() != data.len() {
        return Err(Error::DimensionMismatch { expected: spec.n_obs(), got: data.len() });
    }
    let y = training_response(data);
    let train: Vec<usize> = (0..y.len()).filter(|&i| y[i].is_finite()).collect();
    if train.is_empty() {
        return Err(Error::DegenerateInput("no training rows".into()));
    }
    Ok(Prepared { y, train })
}

/// Offset correction. Each refit uses the latest RF prediction of the
/// residual `y − Aμ` as offset; training rows get out-of-bag predictions,
/// other rows the full ensemble.
pub fn run_inla_rf1(spec: &LgmSpec, data: &StDataset, rf_cfg: &ForestConfig, cfg: &HybridConfig) -> Result<HybridResult> {
    let Prepared { y, train } = prepare(spec, data, cfg, Algorithm::Rf1)?;
    let feats = rf1_features(data);
    let train_x = feats.select_rows(&train);

    let base = fit(spec, &y, None, &cfg.fit)?;
    // Correction carried by the fit being processed (zero for the base fit).
    let mut used = vec![0.0; y.len()];
    let step2 = |f: &LgmFit, used: &[f64]| -> Result<(Vec<f64>, f64, ForestFit)> {
        let resid: Vec<f64> = train.iter().map(|&r| y[r] - (f.eta_mean[r] - used[r])).collect();
        let (forest, s2) = rf_on_residuals(&train_x, &resid, rf_cfg)?;
        let mut e = forest.predict(&feats)?;
        for (k, &r) in train.iter().enumerate() {
            e[r] = forest.oob_pred[k];
        }
        Ok((e, s2, forest))
    };

    let (mut e_rf, mut sigma2, mut forest) = step2(&base, &used)?;
    let mut trace = vec![TraceRecord {
        iter: 0,
        d_kl: None,
        sigma2_rf: sigma2,
        train_rmse: rmse_on(&y, &base.eta_mean, &train),
        optim_iterations: base.optim.iterations,
    }];
    let mut prev = base.clone();
    let mut converged = false;
    for iter in 1..=cfg.max_iter {
        let offset: Vec<f64> = spec.offset.iter().zip(&e_rf).map(|(o, e)| o + e).collect();
        let mut s = spec.clone().with_offset(offset)?;
        if cfg.propagate_uncertainty {
            let extra = spec.extra_obs_variance.iter().map(|v| v + sigma2).collect();
            s = s.with_extra_obs_variance(extra)?;
        }
        let cur = fit(&s, &y, Some(&prev.theta_mode), &cfg.fit)?;
        let d = kld_between_fits(&prev, &cur, cfg.kld_variant, None)?;
        used = e_rf;
        (e_rf, sigma2, forest) = step2(&cur, &used)?;
        log::info!("RF1 iteration {iter}: D_KL = {d:.6}, sigma2_rf = {sigma2:.5}");
        trace.push(TraceRecord {
            iter,
            d_kl: Some(d),
            sigma2_rf: sigma2,
            train_rmse: rmse_on(&y, &cur.eta_mean, &train),
            optim_iterations: cur.optim.iterations,
        });
        prev = cur;
        if d < cfg.delta {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("RF1 stopped at max_iter = {} without reaching D_KL < {}", cfg.max_iter, cfg.delta);
    }

    let tau = prev.theta_mode[0].exp();
    let pred_mean = (0..y.len()).map(|r| prev.eta_mean[r] - used[r] + e_rf[r]).collect();
    let rf_var = if cfg.propagate_uncertainty { sigma2 } else { 0.0 };
    let fitted_var: Vec<f64> = prev.eta_var.iter().map(|v| v + rf_var).collect();
    let pred_var = (0..y.len()).map(|r| fitted_var[r] + 1.0 / tau + spec.extra_obs_variance[r]).collect();
    Ok(HybridResult {
        base_fit: base,
        final_fit: prev,
        pred_mean,
        pred_var,
        fitted_var,
        e_rf,
        sigma2_rf: sigma2,
        trace,
        rf_last: forest,
        corrections: None,
        converged,
    })
}

fn target_index(spec: &LgmSpec, cfg: &HybridConfig) -> Result<usize> {
    match &cfg.target_effect {
        Some(name) => spec
            .effect_index(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown target effect {name:?}"))),
        None if spec.effects.is_empty() => Err(Error::InvalidParameter("model has no random effect".into())),
        None => Ok(0),
    }
}

/// Top `k_stress` nodes of the target effect by the chosen score, ties to
/// the lower index, returned in ascending order.
pub fn select_stress_points(fit: &LgmFit, spec: &LgmSpec, y: &[f64], cfg: &HybridConfig) -> Result<Vec<usize>> {
    let k = target_index(spec, cfg)?;
    let range = spec.effect_range(k);
    let size = range.len();
    if cfg.k_stress == 0 || cfg.k_stress > size {
        return Err(Error::InvalidParameter(format!("k_stress must lie in 1..={size}, got {}", cfg.k_stress)));
    }
    let scores: Vec<f64> = match cfg.selection {
        StressSelection::LatentMarginalVariance => fit.latent_var[range].to_vec(),
        StressSelection::LinearPredictorRmse => {
            let proj = &spec.effects[k].projector;
            let mut num = vec![0.0; size];
            let mut den = vec![0.0; size];
            for (r, &yr) in y.iter().enumerate() {
                if !yr.is_finite() {
                    continue;
                }
                let e2 = (yr - fit.eta_mean[r]).powi(2);
                for (c, w) in proj.row(r) {
                    num[c] += w.abs() * e2;
                    den[c] += w.abs();
                }
            }
            num.iter().zip(&den).map(|(n, d)| if *d > 0.0 { (n / d).sqrt() } else { f64::NEG_INFINITY }).collect()
        }
    };
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..cfg.k_stress].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Feature location of each stress node: the projector-weighted mean of the
/// features of the rows loading on it. Also returns the row with the
/// largest weight. Nodes no row loads on have no location.
fn node_locations(proj: &SparseMatrix, nodes: &[usize], feats: &Features) -> (Vec<Option<Vec<f64>>>, Vec<Option<usize>>) {
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let p = feats.n_cols();
    let mut sum = vec![vec![0.0; p]; nodes.len()];
    let mut wsum = vec![0.0; nodes.len()];
    let mut best: Vec<Option<(usize, f64)>> = vec![None; nodes.len()];
    for r in 0..proj.nrows() {
        for (c, w) in proj.row(r) {
            let Some(&k) = pos.get(&c) else { continue };
            if w <= 0.0 {
                continue;
            }
            for (j, s) in sum[k].iter_mut().enumerate() {
                *s += w * feats.get(r, j);
            }
            wsum[k] += w;
            if best[k].is_none_or(|(_, bw)| w > bw) {
                best[k] = Some((r, w));
            }
        }
    }
    let locs = sum
        .into_iter()
        .zip(&wsum)
        .map(|(s, &w)| (w > 0.0).then(|| s.into_iter().map(|v| v / w).collect()))
        .collect();
    (locs, best.into_iter().map(|b| b.map(|(r, _)| r)).collect())
}

/// Stress-point correction. The base fit picks the nodes; each refit adds
/// an IID correction effect on them with prior mean `μ′_c` (entered as the
/// offset `A_c μ′_c`) and precision `1/σ²_RF`, while `μ′_c` accumulates the
/// RF predictions of the residuals at the node locations.
pub fn run_inla_rf2(spec: &LgmSpec, data: &StDataset, rf_cfg: &ForestConfig, cfg: &HybridConfig) -> Result<HybridResult> {
    let Prepared { y, train } = prepare(spec, data, cfg, Algorithm::Rf2)?;
    if spec.effect_index(CORRECTION_EFFECT).is_some() {
        return Err(Error::InvalidParameter(format!("effect name {CORRECTION_EFFECT:?} is reserved")));
    }
    let feats = rf2_features(data);
    let train_x = feats.select_rows(&train);

    let base = fit(spec, &y, None, &cfg.fit)?;
    let target = target_index(spec, cfg)?;
    let nodes = select_stress_points(&base, spec, &y, cfg)?;
    let proj = &spec.effects[target].projector;
    let a_c = proj.select_columns(&nodes);
    let (locs, rows) = node_locations(proj, &nodes, &feats);
    let located: Vec<usize> = (0..nodes.len()).filter(|&k| locs[k].is_some()).collect();
    let loc_x = Features::from_rows(&located.iter().map(|&k| locs[k].clone().expect("located")).collect::<Vec<_>>());
    let subset: Vec<usize> = nodes.iter().map(|&n| spec.effect_range(target).start + n).collect();

    let step2 = |f: &LgmFit| -> Result<(Vec<f64>, f64, ForestFit)> {
        let resid: Vec<f64> = train.iter().map(|&r| y[r] - f.eta_mean[r]).collect();
        let (forest, s2) = rf_on_residuals(&train_x, &resid, rf_cfg)?;
        let mut e = vec![0.0; nodes.len()];
        if let Ok(lx) = &loc_x {
            for (k, v) in located.iter().zip(forest.predict(lx)?) {
                e[*k] = v;
            }
        }
        Ok((e, s2, forest))
    };

    let (mut e_rf, mut sigma2, mut forest) = step2(&base)?;
    let mut trace = vec![TraceRecord {
        iter: 0,
        d_kl: None,
        sigma2_rf: sigma2,
        train_rmse: rmse_on(&y, &base.eta_mean, &train),
        optim_iterations: base.optim.iterations,
    }];
    let mut mu_c = vec![0.0; nodes.len()];
    let mut tau_c = 0.0;
    let mut prev = base.clone();
    let mut converged = false;
    for iter in 1..=cfg.max_iter {
        for (m, e) in mu_c.iter_mut().zip(&e_rf) {
            *m += e;
        }
        tau_c = 1.0 / sigma2;
        let shift = a_c.mul_vec(&mu_c)?;
        let offset = spec.offset.iter().zip(&shift).map(|(o, s)| o + s).collect();
        let s = spec.clone().with_offset(offset)?.with_effect(
            CORRECTION_EFFECT,
            EffectModel::Iid { len: nodes.len(), precision: IidPrecision::Fixed(tau_c) },
            a_c.clone(),
        )?;
        let cur = fit(&s, &y, Some(&prev.theta_mode), &cfg.fit)?;
        let d = kld_between_fits(&prev, &cur, cfg.kld_variant, Some(&subset))?;
        (e_rf, sigma2, forest) = step2(&cur)?;
        log::info!("RF2 iteration {iter}: D_KL = {d:.6}, sigma2_rf = {sigma2:.5}");
        trace.push(TraceRecord {
            iter,
            d_kl: Some(d),
            sigma2_rf: sigma2,
            train_rmse: rmse_on(&y, &cur.eta_mean, &train),
            optim_iterations: cur.optim.iterations,
        });
        prev = cur;
        if d < cfg.delta {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("RF2 stopped at max_iter = {} without reaching D_KL < {}", cfg.max_iter, cfg.delta);
    }
    Ok(HybridResult {
        base_fit: base,
        pred_mean: prev.pred_mean.clone(),
        pred_var: prev.pred_var.clone(),
        fitted_var: prev.eta_var.clone(),
        final_fit: prev,
        e_rf,
        sigma2_rf: sigma2,
        trace,
        rf_last: forest,
        corrections: Some(StressCorrection { effect: target, nodes, latent_index: subset, rows, mu_c, tau_c }),
        converged,
    })
}

/// Dispatch on `cfg.algorithm`.
pub fn run_hybrid(spec: &LgmSpec, data: &StDataset, rf_cfg: &ForestConfig, cfg: &HybridConfig) -> Result<HybridResult> {
    match cfg.algorithm {
        Algorithm::Rf1 => run_inla_rf1(spec, data, rf_cfg, cfg),
        Algorithm::Rf2 => run_inla_rf2(spec, data, rf_cfg, cfg),
    }
}

/// `(mean, sd)` of the corrected latent value `x_node + x′_k + μ′_k` at
/// each stress node under the final RF2 fit.
pub fn corrected_node_summaries(result: &HybridResult) -> Option<Vec<(f64, f64)>> {
    let corr = result.corrections.as_ref()?;
    let f = &result.final_fit;
    let first_c = f.mu.len() - corr.nodes.len();
    let out = corr
        .latent_index
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let c = first_c + k;
            let mean = f.mu[g] + f.mu[c] + corr.mu_c[k];
            let var = f.latent_var[g] + f.latent_var[c]
                + 2.0 * sigma_entry(&f.factor, &f.selected_inverse, g, c);
            (mean, var.max(0.0).sqrt())
        })
        .collect();
    Some(out)
}
