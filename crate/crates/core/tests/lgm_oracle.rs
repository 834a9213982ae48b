mod common;

use common::{dense_log_marginal, dense_posterior, max_rel_err, random_instance};
use hybrid_st::lgm::{
    conditional_posterior, fit, log_marginal_likelihood, optimize_hyper, EffectModel, FitOptions, IidPrecision,
    LgmEngine, LgmSpec, LogGammaPrior, NelderMeadOptions,
};
use hybrid_st::sparse::{cholesky, SparseMatrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn posterior_matches_dense_oracle(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let (mu, q) = conditional_posterior(&inst.spec, &inst.theta, &inst.y).unwrap();
        let (mean, cov) = dense_posterior(&inst.spec, &inst.theta, &inst.y);
        prop_assert!(max_rel_err(mu.iter().copied(), mean.iter().copied()) < 1e-8);
        let f = cholesky(&q).unwrap();
        let sel = f.selected_inverse();
        for j in 0..q.dim() {
            let col = f.inverse_column(j);
            prop_assert!(max_rel_err(col.iter().copied(), cov.column(j).iter().copied()) < 1e-8);
            prop_assert!((sel.get(j, j).unwrap() - cov[(j, j)]).abs() < 1e-8 * cov[(j, j)].max(1.0));
        }
    }

    #[test]
    fn marginal_likelihood_matches_dense_oracle(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let got = log_marginal_likelihood(&inst.spec, &inst.theta, &inst.y).unwrap();
        let want = dense_log_marginal(&inst.spec, &inst.theta, &inst.y);
        prop_assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn offset_equivalence(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let spec0 = inst.spec.clone().with_offset(vec![0.0; inst.spec.n_obs()]).unwrap();
        let shifted: Vec<f64> = inst.y.iter().zip(&inst.spec.offset).map(|(v, o)| v - o).collect();
        let (mu1, _) = conditional_posterior(&inst.spec, &inst.theta, &inst.y).unwrap();
        let (mu0, _) = conditional_posterior(&spec0, &inst.theta, &shifted).unwrap();
        prop_assert!(max_rel_err(mu1, mu0) < 1e-10);
    }

    #[test]
    fn extra_variance_widens_predictions(seed in any::<u64>(), bump in 0.01f64..5.0) {
        let inst = random_instance(seed);
        let row = (seed % inst.spec.n_obs() as u64) as usize;
        let mut extra = inst.spec.extra_obs_variance.clone();
        extra[row] += bump;
        let wider = inst.spec.clone().with_extra_obs_variance(extra).unwrap();
        let e0 = LgmEngine::new(&inst.spec).unwrap();
        let e1 = LgmEngine::new(&wider).unwrap();
        let s0 = e0.summarize(&e0.evaluate(&inst.theta, &inst.y).unwrap());
        let s1 = e1.summarize(&e1.evaluate(&inst.theta, &inst.y).unwrap());
        prop_assert!(s1.pred_var[row] >= s0.pred_var[row] * (1.0 - 1e-12));
        for (p, e) in s0.pred_var.iter().zip(&s0.eta_var) {
            prop_assert!(p >= e);
        }
    }
}

#[test]
fn eta_variance_matches_dense() {
    for seed in 0..20 {
        let inst = random_instance(seed);
        let engine = LgmEngine::new(&inst.spec).unwrap();
        let s = engine.summarize(&engine.evaluate(&inst.theta, &inst.y).unwrap());
        let (_, cov) = dense_posterior(&inst.spec, &inst.theta, &inst.y);
        let a = inst.spec.design().to_dense();
        for (i, row) in a.iter().enumerate() {
            let mut v = 0.0;
            for (j, aj) in row.iter().enumerate() {
                for (k, ak) in row.iter().enumerate() {
                    v += aj * ak * cov[(j, k)];
                }
            }
            assert!((s.eta_var[i] - v).abs() < 1e-8 * v.max(1.0));
        }
    }
}

fn noise_spec(n: usize) -> LgmSpec {
    LgmSpec::new(n)
}

#[test]
fn recovers_noise_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, (1.0f64 / 20.0).sqrt()).unwrap();
    let y: Vec<f64> = (0..2000).map(|_| noise.sample(&mut rng)).collect();
    let spec = noise_spec(2000);
    let (theta, rep) = optimize_hyper(&spec, &y, &[0.0], &NelderMeadOptions::default()).unwrap();
    assert!(rep.converged);
    let tau = theta[0].exp();
    assert!((10.0..40.0).contains(&tau), "tau = {tau}");
    // Profile-likelihood oracle: the MLE is 1 / mean(y²); the vague prior
    // barely moves it.
    let mle = 2000.0 / y.iter().map(|v| v * v).sum::<f64>();
    assert!((tau / mle - 1.0).abs() < 0.01);
}

fn rw_spec(n: usize) -> (LgmSpec, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let step = Normal::new(0.0, 0.2).unwrap();
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut level = 0.0;
    let y = (0..n)
        .map(|_| {
            level += step.sample(&mut rng);
            level + noise.sample(&mut rng)
        })
        .collect();
    let spec = LgmSpec::new(n)
        .with_fixed("b0", vec![1.0; n])
        .unwrap()
        .with_effect("rw", EffectModel::Rw1 { len: n, prior: LogGammaPrior::default() }, SparseMatrix::identity(n))
        .unwrap();
    (spec, y)
}

#[test]
fn ascent_from_init() {
    let (spec, y) = rw_spec(200);
    let init = [(1.0f64 / 0.09).ln(), (1.0f64 / 0.04).ln()];
    let engine = LgmEngine::new(&spec).unwrap();
    let (mode, _) = optimize_hyper(&spec, &y, &init, &NelderMeadOptions::default()).unwrap();
    assert!(engine.log_posterior(&mode, &y) >= engine.log_posterior(&init, &y));
}

#[test]
fn warm_start_needs_fewer_iterations() {
    let (spec, y) = rw_spec(300);
    let cold = fit(&spec, &y, None, &FitOptions::default()).unwrap();
    let warm = fit(&spec, &y, Some(&cold.theta_mode), &FitOptions::default()).unwrap();
    assert!(warm.optim.iterations < cold.optim.iterations, "{:?} vs {:?}", warm.optim, cold.optim);
}

#[test]
fn integrated_summaries_are_consistent() {
    let (spec, y) = rw_spec(150);
    let plug = fit(&spec, &y, None, &FitOptions::default()).unwrap();
    let opts = FitOptions { integrate_hyper: true, ..FitOptions::default() };
    let mixed = fit(&spec, &y, None, &opts).unwrap();
    // Mixing over θ can only add between-θ variance on top of a similar
    // within-θ variance; means stay close.
    for i in 0..150 {
        assert!((mixed.eta_mean[i] - plug.eta_mean[i]).abs() < 0.1);
        assert!(mixed.pred_var[i] >= mixed.eta_var[i]);
    }
    let ratio: f64 = mixed.eta_var.iter().sum::<f64>() / plug.eta_var.iter().sum::<f64>();
    assert!(ratio > 0.8 && ratio < 2.0, "ratio {ratio}");
}

#[test]
fn fixed_iid_has_no_hyperparameters() {
    let spec = LgmSpec::new(3)
        .with_effect("c", EffectModel::Iid { len: 3, precision: IidPrecision::Fixed(2.0) }, SparseMatrix::identity(3))
        .unwrap();
    assert_eq!(spec.n_hyper(), 1);
    assert!(LgmSpec::new(3)
        .with_effect("c", EffectModel::Iid { len: 3, precision: IidPrecision::Fixed(0.0) }, SparseMatrix::identity(3))
        .is_err());
}
