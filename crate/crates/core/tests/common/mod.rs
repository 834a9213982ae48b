#![allow(dead_code)]

use std::sync::Arc;

use hybrid_st::gmrf::SpdeStructure;
use hybrid_st::lgm::{EffectModel, IidPrecision, LgmSpec, LogGammaPrior, NormalPrior, PcMaternPrior};
use hybrid_st::mesh::{build_grid_mesh, fem_matrices, projector};
use hybrid_st::sparse::SparseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub spec: LgmSpec,
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
}

fn indicator(n: usize, len: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    SparseMatrix::from_rows(len, (0..n).map(|_| vec![(rng.random_range(0..len), 1.0)]).collect()).unwrap()
}

/// Random LGM with a handful of effect families, latent dimension ≤ 50,
/// some missing rows, offsets and extra observation variances.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..30);
    let mut spec = LgmSpec::new(n);
    for k in 0..rng.random_range(0..3) {
        let col = (0..n).map(|_| if k == 0 { 1.0 } else { rng.random_range(-1.0..1.0) }).collect();
        spec = spec.with_fixed(format!("f{k}"), col).unwrap();
    }
    let mut theta = vec![rng.random_range(-0.5..1.5)];
    let mesh = build_grid_mesh([0.0, 1.0], [0.0, 1.0], 3, 3, 0.1).unwrap();
    let spde = Arc::new(SpdeStructure::new(&fem_matrices(&mesh).unwrap()).unwrap());
    let prior = PcMaternPrior::new(0.3, 1.0).unwrap();
    let n_effects = rng.random_range(1..3);
    for e in 0..n_effects {
        let name = format!("e{e}");
        let family = rng.random_range(0..6);
        let (model, proj, th): (EffectModel, SparseMatrix, Vec<f64>) = match family {
            0 => {
                let len = rng.random_range(2..8);
                let p = if rng.random_bool(0.5) {
                    IidPrecision::Fixed(rng.random_range(0.5..3.0))
                } else {
                    IidPrecision::Random(LogGammaPrior::default())
                };
                let th = if matches!(p, IidPrecision::Fixed(_)) { vec![] } else { vec![rng.random_range(-1.0..1.0)] };
                (EffectModel::Iid { len, precision: p }, indicator(n, len, &mut rng), th)
            }
            1 => {
                let len = rng.random_range(3..10);
                let m = EffectModel::Rw1 { len, prior: LogGammaPrior::default() };
                (m, indicator(n, len, &mut rng), vec![rng.random_range(-1.0..2.0)])
            }
            2 => {
                let len = rng.random_range(4..10);
                let m = EffectModel::Rw2 { len, prior: LogGammaPrior::default() };
                (m, indicator(n, len, &mut rng), vec![rng.random_range(-1.0..2.0)])
            }
            3 => {
                let len = rng.random_range(2..8);
                let m = EffectModel::Ar1 { len, prec_prior: LogGammaPrior::default(), ar_prior: NormalPrior::ar_default() };
                (m, indicator(n, len, &mut rng), vec![rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)])
            }
            4 => {
                let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
                let m = EffectModel::Spde { spde: spde.clone(), prior };
                let th = vec![rng.random_range(-1.5..0.0), rng.random_range(-0.5..0.5)];
                (m, projector(&mesh, &pts).unwrap(), th)
            }
            _ => {
                let times = 2;
                let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
                let a = projector(&mesh, &pts).unwrap();
                let m_sp = spde.dim();
                let rows = (0..n)
                    .map(|r| {
                        let t = rng.random_range(0..times);
                        a.row(r).map(|(c, v)| (t * m_sp + c, v)).collect()
                    })
                    .collect();
                let m = EffectModel::SeparableSt { spde: spde.clone(), n_times: times, prior, ar_prior: NormalPrior::ar_default() };
                let th = vec![rng.random_range(-1.5..0.0), rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)];
                (m, SparseMatrix::from_rows(times * m_sp, rows).unwrap(), th)
            }
        };
        theta.extend(th);
        spec = spec.with_effect(name, model, proj).unwrap();
    }
    let offset: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let extra: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..2.0) } else { 0.0 }).collect();
    spec = spec.with_offset(offset).unwrap().with_extra_obs_variance(extra).unwrap();
    let y = (0..n)
        .map(|_| if rng.random_bool(0.15) { f64::NAN } else { rng.random_range(-3.0..3.0) })
        .collect();
    Instance { spec, theta, y }
}

pub fn dense_prior(spec: &LgmSpec, theta: &[f64]) -> DMatrix<f64> {
    let j = spec.latent_dim();
    let mut q = DMatrix::zeros(j, j);
    for i in spec.fixed_range() {
        q[(i, i)] = hybrid_st::lgm::FIXED_EFFECT_PRECISION;
    }
    let mut t = 1;
    for (k, e) in spec.effects.iter().enumerate() {
        let h = e.model.n_hyper();
        let qe = e.model.precision(&theta[t..t + h]).unwrap().to_dense();
        t += h;
        let s = spec.effect_range(k).start;
        for (a, row) in qe.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                q[(s + a, s + b)] = *v;
            }
        }
    }
    q
}

fn dense_design(spec: &LgmSpec) -> DMatrix<f64> {
    let d = spec.design().to_dense();
    DMatrix::from_fn(spec.n_obs(), spec.latent_dim(), |i, j| d[i][j])
}

fn obs_precisions(spec: &LgmSpec, theta: &[f64], y: &[f64]) -> Vec<f64> {
    let tau = theta[0].exp();
    spec.extra_obs_variance
        .iter()
        .zip(y)
        .map(|(e, v)| if v.is_finite() { 1.0 / (1.0 / tau + e) } else { 0.0 })
        .collect()
}

/// Bayesian linear-model posterior `(mean, covariance)` by dense algebra.
pub fn dense_posterior(spec: &LgmSpec, theta: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let a = dense_design(spec);
    let w = obs_precisions(spec, theta, y);
    let wd = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
    let r = DVector::from_iterator(
        y.len(),
        y.iter().zip(&spec.offset).zip(&w).map(|((v, o), t)| if *t > 0.0 { v - o } else { 0.0 }),
    );
    let qpost = dense_prior(spec, theta) + a.transpose() * &wd * &a;
    let chol = qpost.cholesky().unwrap();
    let mean = chol.solve(&(a.transpose() * &wd * r));
    (mean, chol.inverse())
}

/// `log N(y_obs; offset, A Q⁻¹ Aᵀ + W⁻¹)` over the observed rows.
pub fn dense_log_marginal(spec: &LgmSpec, theta: &[f64], y: &[f64]) -> f64 {
    let a = dense_design(spec);
    let w = obs_precisions(spec, theta, y);
    let obs: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
    let m = obs.len();
    let prior_cov = dense_prior(spec, theta).cholesky().unwrap().inverse();
    let ao = DMatrix::from_fn(m, a.ncols(), |i, j| a[(obs[i], j)]);
    let mut cov = &ao * prior_cov * ao.transpose();
    for (i, &r) in obs.iter().enumerate() {
        cov[(i, i)] += 1.0 / w[r];
    }
    let chol = cov.cholesky().unwrap();
    let r = DVector::from_iterator(m, obs.iter().map(|&i| y[i] - spec.offset[i]));
    let z = chol.l().solve_lower_triangular(&r).unwrap();
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.dot(&z))
}

/// `max |a − b| / max(1, |b|)`.
pub fn max_rel_err(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}
