//! Model builders and pipelines for the two simulation studies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::gmrf::SpdeStructure;
use crate::hybrid::{run_hybrid, training_response, Algorithm, HybridConfig, HybridResult};
use crate::lgm::{fit, EffectModel, FitOptions, LgmFit, LgmSpec, LogGammaPrior, NormalPrior, PcMaternPrior};
use crate::mesh::{build_grid_mesh, fem_matrices, projector, Mesh2D};
use crate::metrics::{cv_run, evaluate_rows, BlockAssignment, CvReport, MetricReport};
use crate::sim::{SplitLabel, StDataset};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshOptions {
    pub nx: usize,
    pub ny: usize,
    /// Extension of each side, as a fraction of that axis' data range.
    pub margin: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self { nx: 16, ny: 16, margin: 0.2 }
    }
}

/// Independent sub-seeds derived from one top-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub data: u64,
    pub rf: u64,
    pub kmeans: u64,
}

impl SeedPlan {
    pub fn from_seed(seed: u64) -> Self {
        let derive = |tag: u64| {
            let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        };
        Self { data: derive(1), rf: derive(2), kmeans: derive(3) }
    }
}

/// RF1 settings for the spatio-temporal study.
pub fn spatiotemporal_hybrid(propagate_uncertainty: bool) -> HybridConfig {
    HybridConfig { algorithm: Algorithm::Rf1, propagate_uncertainty, ..HybridConfig::default() }
}

/// RF2 settings for the temporal study. Latent variances are mixed over a
/// hyperparameter grid: at a fixed `θ` the posterior variance ignores the
/// data, so only the boundaries would stand out and no jump would be picked.
pub fn temporal_hybrid() -> HybridConfig {
    let mut cfg = HybridConfig { algorithm: Algorithm::Rf2, ..HybridConfig::default() };
    cfg.fit.integrate_hyper = true;
    cfg
}

fn data_bbox(data: &StDataset) -> Result<([f64; 2], [f64; 2])> {
    let span = |v: &[f64]| v.iter().fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], &x| [lo.min(x), hi.max(x)]);
    let (xr, yr) = (span(&data.x), span(&data.y_coord));
    if data.is_empty() || !(xr[1] > xr[0]) || !(yr[1] > yr[0]) {
        return Err(Error::DegenerateInput("coordinates must span a rectangle".into()));
    }
    Ok((xr, yr))
}

/// Linear covariates, category dummies (classes 2 and 3 against the
/// intercept) and a spatio-temporal SPDE field with AR(1) dynamics, or a
/// purely spatial field when there is a single time point. PC priors use
/// `ρ0 = d/5` with `d` the diagonal of the data extent and `σ0 = 1`.
pub fn spatiotemporal_model(data: &StDataset, mesh_opts: &MeshOptions) -> Result<(LgmSpec, Mesh2D)> {
    let (xr, yr) = data_bbox(data)?;
    let mesh = build_grid_mesh(xr, yr, mesh_opts.nx, mesh_opts.ny, mesh_opts.margin)?;
    let spde = Arc::new(SpdeStructure::new(&fem_matrices(&mesh)?)?);
    let diag = (xr[1] - xr[0]).hypot(yr[1] - yr[0]);
    let prior = PcMaternPrior::new(diag / 5.0, 1.0)?;
    let a_space = projector(&mesh, &data.coords())?;
    let n_times = data.n_times();
    let m = spde.dim();

    let dummy = |c: u8| data.cat.iter().map(|&k| if k == c { 1.0 } else { 0.0 }).collect();
    let spec = LgmSpec::new(data.len())
        .with_fixed("intercept", vec![1.0; data.len()])?
        .with_fixed("z1", data.z1.clone())?
        .with_fixed("z2", data.z2.clone())?
        .with_fixed("cat2", dummy(2))?
        .with_fixed("cat3", dummy(3))?;
    let spec = if n_times == 1 {
        spec.with_effect("field", EffectModel::Spde { spde, prior }, a_space)?
    } else {
        let rows = (0..data.len()).map(|r| a_space.row(r).map(|(c, v)| ((data.t[r] - 1) * m + c, v)).collect()).collect();
        let model = EffectModel::SeparableSt { spde, n_times, prior, ar_prior: NormalPrior::ar_default() };
        spec.with_effect("field", model, SparseMatrix::from_rows(n_times * m, rows)?)?
    };
    Ok((spec, mesh))
}

/// Intercept plus a second-order random walk over the time index.
pub fn temporal_model(data: &StDataset) -> Result<LgmSpec> {
    let n_times = data.n_times();
    if n_times < 3 {
        return Err(Error::DegenerateInput("a second-order random walk needs at least 3 time points".into()));
    }
    let proj = SparseMatrix::from_rows(n_times, data.t.iter().map(|&t| vec![(t - 1, 1.0)]).collect())?;
    LgmSpec::new(data.len())
        .with_fixed("intercept", vec![1.0; data.len()])?
        .with_effect("time", EffectModel::Rw2 { len: n_times, prior: LogGammaPrior::default() }, proj)
}

/// Fit on the training rows of `data` only.
pub fn fit_base(spec: &LgmSpec, data: &StDataset, init: Option<&[f64]>, opts: &FitOptions) -> Result<LgmFit> {
    fit(spec, &training_response(data), init, opts)
}

/// Distribution behind the 95% intervals of CP and AIW.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalBasis {
    /// Posterior of the fitted value `ŷ`: the linear predictor, plus the
    /// RF variance when RF1 propagates it.
    #[default]
    FittedValue,
    /// Predictive distribution of a new observation `y`.
    Observation,
}

impl IntervalBasis {
    pub fn base_sd(self, fit: &LgmFit) -> Vec<f64> {
        match self {
            Self::FittedValue => fit.eta_sd(),
            Self::Observation => fit.pred_sd(),
        }
    }

    pub fn hybrid_sd(self, result: &HybridResult) -> Vec<f64> {
        match self {
            Self::FittedValue => result.fitted_sd(),
            Self::Observation => result.pred_sd(),
        }
    }
}

/// `(train, test)` metrics of `(mean, sd)` against the response.
pub fn split_metrics(data: &StDataset, mean: &[f64], sd: &[f64]) -> Result<(MetricReport, Option<MetricReport>)> {
    let train = evaluate_rows(&data.response, mean, sd, &data.rows_with(SplitLabel::Train))?;
    let test_rows = data.rows_with(SplitLabel::Test);
    let test = if test_rows.is_empty() { None } else { Some(evaluate_rows(&data.response, mean, sd, &test_rows)?) };
    Ok((train, test))
}

/// One stress node: linear predictor at its row under both fits, and truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StressRow {
    pub node: usize,
    pub base_mean: f64,
    pub base_sd: f64,
    pub corrected_mean: f64,
    pub corrected_sd: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressReport {
    pub rows: Vec<StressRow>,
    pub base: MetricReport,
    pub corrected: MetricReport,
}

/// Compare base and corrected linear predictors with `eta_true` at the row
/// of every stress node, using 95% credible intervals of the predictor.
pub fn stress_point_report(data: &StDataset, result: &HybridResult) -> Option<StressReport> {
    let corr = result.corrections.as_ref()?;
    let (b, f) = (&result.base_fit, &result.final_fit);
    let rows: Vec<StressRow> = corr
        .nodes
        .iter()
        .zip(&corr.rows)
        .filter_map(|(&node, row)| {
            let r = (*row)?;
            Some(StressRow {
                node,
                base_mean: b.eta_mean[r],
                base_sd: b.eta_var[r].sqrt(),
                corrected_mean: f.eta_mean[r],
                corrected_sd: f.eta_var[r].sqrt(),
                truth: data.eta_true[r],
            })
        })
        .collect();
    if rows.is_empty() {
        return None;
    }
    let truth: Vec<f64> = rows.iter().map(|s| s.truth).collect();
    let col = |g: fn(&StressRow) -> f64| rows.iter().map(g).collect::<Vec<_>>();
    let base = crate::metrics::evaluate(&truth, &col(|s| s.base_mean), &col(|s| s.base_sd)).ok()?;
    let corrected = crate::metrics::evaluate(&truth, &col(|s| s.corrected_mean), &col(|s| s.corrected_sd)).ok()?;
    Some(StressReport { rows, base, corrected })
}

/// Models compared in cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvModel {
    #[serde(rename = "INLA")]
    Base,
    #[serde(rename = "INLA-RF1.1")]
    Rf1,
    #[serde(rename = "INLA-RF1.2")]
    Rf1Propagated,
}

impl CvModel {
    pub const ALL: [CvModel; 3] = [CvModel::Base, CvModel::Rf1, CvModel::Rf1Propagated];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Base => "INLA",
            Self::Rf1 => "INLA-RF1.1",
            Self::Rf1Propagated => "INLA-RF1.2",
        }
    }
}

/// `(mean, sd)` of one model trained on the training rows, with the sd
/// taken on `basis`.
pub fn predict_model(
    model: CvModel,
    spec: &LgmSpec,
    data: &StDataset,
    rf: &ForestConfig,
    hybrid: &HybridConfig,
    basis: IntervalBasis,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match model {
        CvModel::Base => {
            let f = fit_base(spec, data, None, &hybrid.fit)?;
            Ok((f.pred_mean.clone(), basis.base_sd(&f)))
        }
        CvModel::Rf1 | CvModel::Rf1Propagated => {
            let cfg = HybridConfig {
                algorithm: Algorithm::Rf1,
                propagate_uncertainty: model == CvModel::Rf1Propagated,
                ..hybrid.clone()
            };
            let r = run_hybrid(spec, data, rf, &cfg)?;
            Ok((r.pred_mean.clone(), basis.hybrid_sd(&r)))
        }
    }
}

/// Leave-one-block-out CV of the base model and both RF1 variants. The
/// model structure depends only on coordinates and covariates, so one spec
/// serves every fold.
pub fn cv_models(
    spec: &LgmSpec,
    data: &StDataset,
    blocks: &BlockAssignment,
    rf: &ForestConfig,
    hybrid: &HybridConfig,
    basis: IntervalBasis,
) -> Result<Vec<(CvModel, CvReport)>> {
    CvModel::ALL
        .iter()
        .map(|&m| Ok((m, cv_run(data, blocks, |fold| predict_model(m, spec, fold, rf, hybrid, basis))?)))
        .collect()
}
