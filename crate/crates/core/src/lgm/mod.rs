//! Gaussian-likelihood latent Gaussian models.
//!
//! The latent vector is laid out as `[fixed effects, effect 1, effect 2, …]`
//! and `η = A x + offset`. Hyperparameters live on an internal scale:
//! `θ = [log τ_obs, effect 1 slots…, effect 2 slots…]`. Observations equal
//! to `NaN` are treated as missing: they get predictions but no likelihood
//! contribution.

mod effects;
mod optim;
mod priors;

pub use effects::{Effect, EffectModel, FixedEffect, IidPrecision};
pub use optim::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use priors::{
    ar_from_internal, ar_to_internal, pc_prior_matern_logdensity, LogGammaPrior, NormalPrior, PcMaternPrior,
};

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::{CholeskyFactor, SelectedInverse, SparseMatrix, SparseSymMatrix, SymbolicCholesky};

/// Prior precision of every fixed-effect coefficient.
pub const FIXED_EFFECT_PRECISION: f64 = 0.001;

/// Declarative latent Gaussian model.
#[derive(Debug, Clone)]
pub struct LgmSpec {
    n_obs: usize,
    pub fixed: Vec<FixedEffect>,
    pub effects: Vec<Effect>,
    pub offset: Vec<f64>,
    /// Known variance added to `1/τ_obs` per observation.
    pub extra_obs_variance: Vec<f64>,
    pub obs_prior: LogGammaPrior,
    /// Last symbolic analysis of the posterior precision, shared by clones
    /// so refits that only change offsets or variances skip the ordering.
    symbolic_cache: Arc<Mutex<Option<SymbolicCholesky>>>,
}

impl LgmSpec {
    pub fn new(n_obs: usize) -> Self {
        Self {
            n_obs,
            fixed: Vec::new(),
            effects: Vec::new(),
            offset: vec![0.0; n_obs],
            extra_obs_variance: vec![0.0; n_obs],
            obs_prior: LogGammaPrior::default(),
            symbolic_cache: Arc::default(),
        }
    }

    pub fn with_fixed(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.n_obs {
            return Err(Error::DimensionMismatch { expected: self.n_obs, got: values.len() });
        }
        self.fixed.push(FixedEffect { name: name.into(), values });
        self.symbolic_cache = Arc::default();
        Ok(self)
    }

    pub fn with_effect(mut self, name: impl Into<String>, model: EffectModel, projector: SparseMatrix) -> Result<Self> {
        if projector.nrows() != self.n_obs {
            return Err(Error::DimensionMismatch { expected: self.n_obs, got: projector.nrows() });
        }
        if let EffectModel::Iid { precision: IidPrecision::Fixed(t), .. } = model {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!("fixed IID precision must be positive, got {t}")));
            }
        }
        self.effects.push(Effect::new(name, model, projector)?);
        self.symbolic_cache = Arc::default();
        Ok(self)
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != self.n_obs {
            return Err(Error::DimensionMismatch { expected: self.n_obs, got: offset.len() });
        }
        self.offset = offset;
        Ok(self)
    }

    pub fn with_extra_obs_variance(mut self, extra: Vec<f64>) -> Result<Self> {
        if extra.len() != self.n_obs {
            return Err(Error::DimensionMismatch { expected: self.n_obs, got: extra.len() });
        }
        if extra.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("extra observation variance must be non-negative".into()));
        }
        self.extra_obs_variance = extra;
        Ok(self)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn latent_dim(&self) -> usize {
        self.fixed.len() + self.effects.iter().map(|e| e.model.size()).sum::<usize>()
    }

    pub fn fixed_range(&self) -> Range<usize> {
        0..self.fixed.len()
    }

    /// Latent index range of effect `k`.
    pub fn effect_range(&self, k: usize) -> Range<usize> {
        let start = self.fixed.len() + self.effects[..k].iter().map(|e| e.model.size()).sum::<usize>();
        start..start + self.effects[k].model.size()
    }

    pub fn effect_index(&self, name: &str) -> Option<usize> {
        self.effects.iter().position(|e| e.name == name)
    }

    pub fn n_hyper(&self) -> usize {
        1 + self.effects.iter().map(|e| e.model.n_hyper()).sum::<usize>()
    }

    fn hyper_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 1;
        self.effects
            .iter()
            .map(|e| {
                let r = start..start + e.model.n_hyper();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn hyper_names(&self) -> Vec<String> {
        let mut names = vec!["obs/log_precision".to_string()];
        for e in &self.effects {
            names.extend(e.model.hyper_names().into_iter().map(|h| format!("{}/{h}", e.name)));
        }
        names
    }

    /// `θ` on the natural scale, as `(effect/name, value)` pairs.
    pub fn natural_hyper(&self, theta: &[f64]) -> Vec<(String, f64)> {
        let mut out = vec![("obs/precision".to_string(), theta[0].exp())];
        for (e, r) in self.effects.iter().zip(self.hyper_ranges()) {
            out.extend(e.model.natural(&theta[r]).into_iter().map(|(k, v)| (format!("{}/{k}", e.name), v)));
        }
        out
    }

    /// Data-informed cold start: observation precision from the sample
    /// variance, effects from their own defaults.
    pub fn initial_theta(&self, y: &[f64]) -> Vec<f64> {
        let obs: Vec<f64> = y.iter().copied().filter(|v| v.is_finite()).collect();
        let n = obs.len().max(1) as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut th = vec![-(var.max(1e-6)).ln()];
        for e in &self.effects {
            th.extend(e.model.default_init());
        }
        th
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut lp = self.obs_prior.log_density_internal(theta[0]);
        for (e, r) in self.effects.iter().zip(self.hyper_ranges()) {
            lp += e.model.log_prior(&theta[r]);
        }
        lp
    }

    /// Stacked `A = [fixed columns | effect projectors]`.
    pub fn design(&self) -> SparseMatrix {
        let mut rows = vec![Vec::new(); self.n_obs];
        for (j, f) in self.fixed.iter().enumerate() {
            for (row, &v) in rows.iter_mut().zip(&f.values) {
                if v != 0.0 {
                    row.push((j, v));
                }
            }
        }
        for k in 0..self.effects.len() {
            let start = self.effect_range(k).start;
            for (r, row) in rows.iter_mut().enumerate() {
                row.extend(self.effects[k].projector.row(r).map(|(c, v)| (c + start, v)));
            }
        }
        SparseMatrix::from_rows(self.latent_dim(), rows).expect("columns in range")
    }
}

/// Precomputed assembly plan and symbolic factorizations for one spec.
pub struct LgmEngine<'a> {
    spec: &'a LgmSpec,
    a: SparseMatrix,
    pattern: SparseSymMatrix,
    fixed_slots: Vec<usize>,
    effect_slots: Vec<Vec<usize>>,
    effect_symbolic: Vec<Option<SymbolicCholesky>>,
    gram: Vec<(usize, usize, f64)>,
    symbolic: SymbolicCholesky,
    hyper_ranges: Vec<Range<usize>>,
}

/// Conditional posterior of the latent field at one `θ`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub factor: CholeskyFactor,
    pub log_likelihood: f64,
    pub log_prior: f64,
    /// Effective observation precisions (zero for missing rows).
    pub tau_eff: Vec<f64>,
}

impl Evaluation {
    pub fn log_posterior(&self) -> f64 {
        self.log_likelihood + self.log_prior
    }

    pub fn q_post(&self) -> &SparseSymMatrix {
        self.factor.matrix()
    }
}

impl<'a> LgmEngine<'a> {
    pub fn new(spec: &'a LgmSpec) -> Result<Self> {
        let dim = spec.latent_dim();
        let a = spec.design();
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        for j in spec.fixed_range() {
            trip.push((j, j, 0.0));
        }
        let mut priors = Vec::with_capacity(spec.effects.len());
        let mut effect_symbolic = Vec::with_capacity(spec.effects.len());
        for (k, e) in spec.effects.iter().enumerate() {
            let q = e.model.precision(&e.model.default_init())?;
            let start = spec.effect_range(k).start;
            trip.extend(q.iter().map(|(i, j, _)| (i + start, j + start, 0.0)));
            priors.push(q);
            effect_symbolic.push(e.model.log_det_symbolic()?);
        }
        for r in 0..a.nrows() {
            let row: Vec<_> = a.row(r).collect();
            for (p, &(ci, _)) in row.iter().enumerate() {
                for &(cj, _) in &row[..=p] {
                    trip.push((ci, cj, 0.0));
                }
            }
        }
        let pattern = if dim == 0 {
            SparseSymMatrix::from_raw_parts(0, vec![0], vec![], vec![])
        } else {
            SparseSymMatrix::from_triplets(dim, &trip)?
        };
        let slot = |i: usize, j: usize| pattern.position(i, j).expect("entry is in the pattern");
        let fixed_slots = spec.fixed_range().map(|j| slot(j, j)).collect();
        let effect_slots = priors
            .iter()
            .enumerate()
            .map(|(k, q)| {
                let start = spec.effect_range(k).start;
                q.iter().map(|(i, j, _)| slot(i + start, j + start)).collect()
            })
            .collect();
        let mut gram = Vec::new();
        for r in 0..a.nrows() {
            let row: Vec<_> = a.row(r).collect();
            for (p, &(ci, vi)) in row.iter().enumerate() {
                for &(cj, vj) in &row[..=p] {
                    gram.push((slot(ci, cj), r, vi * vj));
                }
            }
        }
        let symbolic = {
            let mut cache = spec.symbolic_cache.lock().unwrap_or_else(|e| e.into_inner());
            match cache.as_ref().filter(|s| s.matches(&pattern)) {
                Some(s) => s.clone(),
                None => {
                    let s = SymbolicCholesky::analyze(&pattern);
                    *cache = Some(s.clone());
                    s
                }
            }
        };
        Ok(Self {
            spec,
            a,
            pattern,
            fixed_slots,
            effect_slots,
            effect_symbolic,
            gram,
            symbolic,
            hyper_ranges: spec.hyper_ranges(),
        })
    }

    pub fn spec(&self) -> &LgmSpec {
        self.spec
    }

    pub fn design(&self) -> &SparseMatrix {
        &self.a
    }

    fn check_inputs(&self, theta: &[f64], y: &[f64]) -> Result<()> {
        if theta.len() != self.spec.n_hyper() {
            return Err(Error::DimensionMismatch { expected: self.spec.n_hyper(), got: theta.len() });
        }
        if y.len() != self.spec.n_obs {
            return Err(Error::DimensionMismatch { expected: self.spec.n_obs, got: y.len() });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("hyperparameters must be finite".into()));
        }
        Ok(())
    }

    /// `τ_eff,i = (1/τ + extra_i)⁻¹` for every row, observed or not.
    pub fn predictive_precision(&self, theta: &[f64]) -> Vec<f64> {
        let tau = theta[0].exp();
        self.spec.extra_obs_variance.iter().map(|e| 1.0 / (1.0 / tau + e)).collect()
    }

    /// Conditional posterior and log marginal likelihood at `θ`.
    pub fn evaluate(&self, theta: &[f64], y: &[f64]) -> Result<Evaluation> {
        self.check_inputs(theta, y)?;
        let spec = self.spec;
        let mut values = vec![0.0; self.pattern.nnz()];
        let p = spec.fixed.len() as f64;
        let mut log_det_prior = p * FIXED_EFFECT_PRECISION.ln();
        for &s in &self.fixed_slots {
            values[s] += FIXED_EFFECT_PRECISION;
        }
        for (k, e) in spec.effects.iter().enumerate() {
            let th = &theta[self.hyper_ranges[k].clone()];
            let q = e.model.precision(th)?;
            debug_assert_eq!(q.nnz(), self.effect_slots[k].len());
            for (&s, &v) in self.effect_slots[k].iter().zip(q.values()) {
                values[s] += v;
            }
            log_det_prior += e.model.log_det(th, &q, self.effect_symbolic[k].as_ref())?;
        }

        let mut tau_eff = self.predictive_precision(theta);
        for (t, v) in tau_eff.iter_mut().zip(y) {
            if !v.is_finite() {
                *t = 0.0;
            }
        }
        for &(s, r, c) in &self.gram {
            values[s] += tau_eff[r] * c;
        }
        let mut q_post = self.pattern.clone();
        q_post.values_mut().copy_from_slice(&values);
        let factor = self.symbolic.factor(&q_post)?;

        let resid: Vec<f64> = y
            .iter()
            .zip(&spec.offset)
            .zip(&tau_eff)
            .map(|((v, o), t)| if *t > 0.0 { v - o } else { 0.0 })
            .collect();
        let wr: Vec<f64> = resid.iter().zip(&tau_eff).map(|(r, t)| r * t).collect();
        let b = self.a.tr_mul_vec(&wr)?;
        let mu = factor.solve(&b)?;

        let mut n_used = 0usize;
        let mut sum_log_tau = 0.0;
        let mut rwr = 0.0;
        for ((r, w), t) in resid.iter().zip(&wr).zip(&tau_eff) {
            if *t > 0.0 {
                n_used += 1;
                sum_log_tau += t.ln();
                rwr += r * w;
            }
        }
        let bmu: f64 = b.iter().zip(&mu).map(|(x, y)| x * y).sum();
        let log_likelihood = 0.5 * log_det_prior + 0.5 * sum_log_tau
            - 0.5 * factor.log_det()
            - 0.5 * (rwr - bmu)
            - 0.5 * n_used as f64 * (2.0 * PI).ln();
        if !log_likelihood.is_finite() {
            return Err(Error::InvalidParameter("log likelihood is not finite".into()));
        }
        Ok(Evaluation {
            theta: theta.to_vec(),
            mu,
            factor,
            log_likelihood,
            log_prior: spec.log_prior(theta),
            tau_eff,
        })
    }

    /// `log π(y|θ) + log π(θ)`, or `−∞` where the model cannot be evaluated.
    pub fn log_posterior(&self, theta: &[f64], y: &[f64]) -> f64 {
        match self.evaluate(theta, y) {
            Ok(ev) => ev.log_posterior(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Posterior summaries at one `θ`.
    pub fn summarize(&self, ev: &Evaluation) -> Summary {
        let sel = ev.factor.selected_inverse();
        let latent_var = sel.diagonal();
        let mut eta_mean = self.a.mul_vec(&ev.mu).expect("dims agree");
        for (e, o) in eta_mean.iter_mut().zip(&self.spec.offset) {
            *e += o;
        }
        let eta_var = self.row_variances(&ev.factor, &sel);
        let tau_pred = self.predictive_precision(&ev.theta);
        let pred_var = eta_var.iter().zip(&tau_pred).map(|(v, t)| v + 1.0 / t).collect();
        Summary {
            latent_mean: ev.mu.clone(),
            latent_var,
            pred_mean: eta_mean.clone(),
            eta_mean,
            eta_var,
            pred_var,
            selected_inverse: sel,
        }
    }

    /// `a_iᵀ Σ a_i` for every row of the design.
    fn row_variances(&self, factor: &CholeskyFactor, sel: &SelectedInverse) -> Vec<f64> {
        (0..self.a.nrows())
            .map(|r| {
                let row: Vec<_> = self.a.row(r).collect();
                let mut v = 0.0;
                for (p, &(ci, ai)) in row.iter().enumerate() {
                    for &(cj, aj) in &row[..p] {
                        v += 2.0 * ai * aj * sigma_entry(factor, sel, ci, cj);
                    }
                    v += ai * ai * sigma_entry(factor, sel, ci, ci);
                }
                v.max(0.0)
            })
            .collect()
    }
}

/// `Σ_ij`, from the selected inverse when available, else by a solve.
pub fn sigma_entry(factor: &CholeskyFactor, sel: &SelectedInverse, i: usize, j: usize) -> f64 {
    sel.get(i, j).unwrap_or_else(|| factor.inverse_column(j)[i])
}

/// Latent, linear-predictor and predictive summaries.
#[derive(Debug, Clone)]
pub struct Summary {
    pub latent_mean: Vec<f64>,
    pub latent_var: Vec<f64>,
    pub eta_mean: Vec<f64>,
    pub eta_var: Vec<f64>,
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
    pub selected_inverse: SelectedInverse,
}

/// `(μ, Q_post)` at a fixed `θ`.
pub fn conditional_posterior(spec: &LgmSpec, theta: &[f64], y: &[f64]) -> Result<(Vec<f64>, SparseSymMatrix)> {
    let ev = LgmEngine::new(spec)?.evaluate(theta, y)?;
    let q = ev.q_post().clone();
    Ok((ev.mu, q))
}

/// `log π(y | θ)` in closed form.
pub fn log_marginal_likelihood(spec: &LgmSpec, theta: &[f64], y: &[f64]) -> Result<f64> {
    Ok(LgmEngine::new(spec)?.evaluate(theta, y)?.log_likelihood)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub optimizer: NelderMeadOptions,
    /// Initial simplex step when a warm start is supplied.
    pub warm_step: f64,
    /// Mix the conditional summaries over a Gauss–Hermite grid in `θ`
    /// instead of plugging in the mode.
    pub integrate_hyper: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { optimizer: NelderMeadOptions::default(), warm_step: 0.1, integrate_hyper: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Fitted model at the hyperparameter mode.
#[derive(Debug, Clone)]
pub struct LgmFit {
    pub theta_mode: Vec<f64>,
    /// Conditional posterior mean at the mode.
    pub mu: Vec<f64>,
    /// Factor of `Q_post` at the mode.
    pub factor: CholeskyFactor,
    pub latent_mean: Vec<f64>,
    pub latent_var: Vec<f64>,
    pub eta_mean: Vec<f64>,
    pub eta_var: Vec<f64>,
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
    pub log_marginal: f64,
    pub log_posterior: f64,
    pub optim: OptimReport,
    /// Entries of `Q_post⁻¹` at the mode on the factor pattern.
    pub selected_inverse: SelectedInverse,
}

impl LgmFit {
    pub fn q_post(&self) -> &SparseSymMatrix {
        self.factor.matrix()
    }

    pub fn pred_sd(&self) -> Vec<f64> {
        self.pred_var.iter().map(|v| v.sqrt()).collect()
    }

    pub fn eta_sd(&self) -> Vec<f64> {
        self.eta_var.iter().map(|v| v.sqrt()).collect()
    }

    /// `(lower, upper)` of the Gaussian predictive interval.
    pub fn predictive_interval(&self, z: f64) -> Vec<(f64, f64)> {
        self.pred_mean
            .iter()
            .zip(&self.pred_var)
            .map(|(m, v)| (m - z * v.sqrt(), m + z * v.sqrt()))
            .collect()
    }
}

/// Nelder–Mead maximization of `log π(y|θ) + log π(θ)` from `init`.
pub fn optimize_hyper(
    spec: &LgmSpec,
    y: &[f64],
    init: &[f64],
    opts: &NelderMeadOptions,
) -> Result<(Vec<f64>, OptimReport)> {
    let engine = LgmEngine::new(spec)?;
    optimize_with(&engine, y, init, opts)
}

fn optimize_with(
    engine: &LgmEngine<'_>,
    y: &[f64],
    init: &[f64],
    opts: &NelderMeadOptions,
) -> Result<(Vec<f64>, OptimReport)> {
    if init.len() != engine.spec.n_hyper() {
        return Err(Error::DimensionMismatch { expected: engine.spec.n_hyper(), got: init.len() });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial hyperparameters must be finite".into()));
    }
    let r = nelder_mead(|th| -engine.log_posterior(th, y), init, opts)?;
    if !r.f.is_finite() {
        return Err(Error::OptimizationFailed("no feasible hyperparameter found".into()));
    }
    let report = OptimReport { iterations: r.iterations, evaluations: r.evaluations, converged: r.converged };
    log::debug!("hyperparameter optimization: {report:?}");
    Ok((r.x, report))
}

/// Optimize the hyperparameters, then summarize the latent field, linear
/// predictor and predictive distribution. `init = Some(θ)` warm-starts the
/// optimizer with a smaller initial simplex.
pub fn fit(spec: &LgmSpec, y: &[f64], init: Option<&[f64]>, opts: &FitOptions) -> Result<LgmFit> {
    let engine = LgmEngine::new(spec)?;
    fit_with(&engine, y, init, opts)
}

pub fn fit_with(engine: &LgmEngine<'_>, y: &[f64], init: Option<&[f64]>, opts: &FitOptions) -> Result<LgmFit> {
    let spec = engine.spec;
    if y.len() != spec.n_obs {
        return Err(Error::DimensionMismatch { expected: spec.n_obs, got: y.len() });
    }
    let mut nm = opts.optimizer;
    let start = match init {
        Some(th) => {
            nm.init_step = opts.warm_step;
            th.to_vec()
        }
        None => spec.initial_theta(y),
    };
    let (mode, report) = optimize_with(engine, y, &start, &nm)?;
    let ev = engine.evaluate(&mode, y)?;
    let mut summary = engine.summarize(&ev);
    if opts.integrate_hyper && !mode.is_empty() {
        match integrate_summaries(engine, y, &ev) {
            Some(mixed) => {
                let sel = summary.selected_inverse;
                summary = Summary { selected_inverse: sel, ..mixed };
            }
            None => log::warn!("hyperparameter Hessian not negative definite; using plug-in summaries"),
        }
    }
    Ok(LgmFit {
        theta_mode: mode,
        mu: ev.mu.clone(),
        log_marginal: ev.log_likelihood,
        log_posterior: ev.log_posterior(),
        factor: ev.factor,
        latent_mean: summary.latent_mean,
        latent_var: summary.latent_var,
        eta_mean: summary.eta_mean,
        eta_var: summary.eta_var,
        pred_mean: summary.pred_mean,
        pred_var: summary.pred_var,
        optim: report,
        selected_inverse: summary.selected_inverse,
    })
}

/// Finite-difference Hessian of the log posterior at `theta`.
fn log_posterior_hessian(engine: &LgmEngine<'_>, y: &[f64], theta: &[f64], f0: f64, h: f64) -> DMatrix<f64> {
    let d = theta.len();
    let at = |shifts: &[(usize, f64)]| {
        let mut t = theta.to_vec();
        for &(i, s) in shifts {
            t[i] += s;
        }
        engine.log_posterior(&t, y)
    };
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Mixture of conditional summaries over a 3-point Gauss–Hermite tensor grid
/// in the standardized coordinates `θ = θ* + V Λ^{-1/2} z`, reweighted by
/// the actual posterior. `None` when the Hessian is not negative definite.
fn integrate_summaries(engine: &LgmEngine<'_>, y: &[f64], mode_ev: &Evaluation) -> Option<Summary> {
    let mode = &mode_ev.theta;
    let d = mode.len();
    let f0 = mode_ev.log_posterior();
    let neg_h = -log_posterior_hessian(engine, y, mode, f0, 0.05);
    let eig = SymmetricEigen::new(neg_h);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let nodes = [-(3f64.sqrt()), 0.0, 3f64.sqrt()];
    let weights = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
    let n_points = 3usize.pow(d as u32);
    let points: Vec<(Vec<f64>, f64, f64)> = (0..n_points)
        .map(|mut code| {
            let mut z = vec![0.0; d];
            let mut w = 1.0;
            for zi in z.iter_mut() {
                *zi = nodes[code % 3];
                w *= weights[code % 3];
                code /= 3;
            }
            let mut th = mode.clone();
            for k in 0..d {
                let scale = z[k] / eig.eigenvalues[k].sqrt();
                for i in 0..d {
                    th[i] += eig.eigenvectors[(i, k)] * scale;
                }
            }
            let z2: f64 = z.iter().map(|v| v * v).sum();
            (th, w, z2)
        })
        .collect();
    let evaluated: Vec<Option<(f64, Summary)>> = points
        .par_iter()
        .map(|(th, w, z2)| {
            let ev = engine.evaluate(th, y).ok()?;
            // GH weight / standard-normal kernel × posterior ratio.
            let log_w = w.ln() + 0.5 * z2 + ev.log_posterior() - f0;
            Some((log_w, engine.summarize(&ev)))
        })
        .collect();
    let valid: Vec<(f64, Summary)> = evaluated.into_iter().flatten().collect();
    let max_lw = valid.iter().map(|(lw, _)| *lw).fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return None;
    }
    let ws: Vec<f64> = valid.iter().map(|(lw, _)| (lw - max_lw).exp()).collect();
    let total: f64 = ws.iter().sum();
    let mix = |mean: fn(&Summary) -> &Vec<f64>, var: fn(&Summary) -> &Vec<f64>| {
        let len = mean(&valid[0].1).len();
        let mut m = vec![0.0; len];
        let mut s2 = vec![0.0; len];
        for ((_, s), w) in valid.iter().zip(&ws) {
            let w = w / total;
            for i in 0..len {
                let mi = mean(s)[i];
                m[i] += w * mi;
                s2[i] += w * (var(s)[i] + mi * mi);
            }
        }
        let v = s2.iter().zip(&m).map(|(s, mi)| (s - mi * mi).max(0.0)).collect::<Vec<_>>();
        (m, v)
    };
    let (latent_mean, latent_var) = mix(|s| &s.latent_mean, |s| &s.latent_var);
    let (eta_mean, eta_var) = mix(|s| &s.eta_mean, |s| &s.eta_var);
    let (pred_mean, pred_var) = mix(|s| &s.pred_mean, |s| &s.pred_var);
    let selected_inverse = valid.into_iter().next().expect("nonempty").1.selected_inverse;
    Some(Summary { latent_mean, latent_var, eta_mean, eta_var, pred_mean, pred_var, selected_inverse })
}
