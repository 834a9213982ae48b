use hybrid_st::forest::{fit_forest, Features, ForestConfig};
use hybrid_st::metrics::{contiguous_time_groups, cv_run, evaluate, kmeans, st_blocks, MetricReport};
use hybrid_st::sim::{simulate_spatiotemporal, SpatioTemporalConfig, SplitLabel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn triples(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, 0.0f64..5.0), n)
}

fn unzip3(v: &[(f64, f64, f64)]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (v.iter().map(|t| t.0).collect(), v.iter().map(|t| t.1).collect(), v.iter().map(|t| t.2).collect())
}

fn close(a: &MetricReport, b: &MetricReport) -> bool {
    a.as_pairs().iter().zip(b.as_pairs()).all(|((_, x), (_, y))| (x - y).abs() < 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_row_order(rows in triples(1..50), rot in 0usize..50) {
        let (y, m, s) = unzip3(&rows);
        let mut shuffled = rows.clone();
        shuffled.rotate_left(rot % rows.len());
        shuffled.reverse();
        let (y2, m2, s2) = unzip3(&shuffled);
        prop_assert!(close(&evaluate(&y, &m, &s).unwrap(), &evaluate(&y2, &m2, &s2).unwrap()));
    }

    #[test]
    fn wider_intervals_cover_more(rows in triples(1..50), factor in 1.0f64..4.0) {
        let (y, m, s) = unzip3(&rows);
        let wide: Vec<f64> = s.iter().map(|v| v * factor).collect();
        let (a, b) = (evaluate(&y, &m, &s).unwrap(), evaluate(&y, &m, &wide).unwrap());
        prop_assert!(b.cp >= a.cp);
        prop_assert!(b.aiw >= a.aiw);
        prop_assert!(a.mae <= a.rmse + 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.cp));
    }

    #[test]
    fn kmeans_is_deterministic(seed in any::<u64>(), n in 3usize..60, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let a = kmeans(&pts, k, seed).unwrap();
        prop_assert_eq!(&a, &kmeans(&pts, k, seed).unwrap());
        prop_assert!(a.iter().all(|&l| l < k));
    }

    #[test]
    fn forest_predictions_stay_within_the_response_range(seed in any::<u64>(), n in 10usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = Features::from_columns(cols).unwrap();
        let cfg = ForestConfig { n_trees: 20, seed, ..Default::default() };
        let fit = fit_forest(&x, &y, &cfg).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let pred = fit.predict(&x).unwrap();
        prop_assert!(pred.iter().all(|p| *p >= lo - 1e-12 && *p <= hi + 1e-12));
        prop_assert_eq!(pred, fit_forest(&x, &y, &cfg).unwrap().predict(&x).unwrap());
    }
}

#[test]
fn mean_report_averages_each_metric() {
    let a = MetricReport { rmse: 1.0, mae: 0.5, cp: 0.9, aiw: 2.0 };
    let b = MetricReport { rmse: 3.0, mae: 1.5, cp: 0.7, aiw: 4.0 };
    let m = MetricReport::mean(&[a, b]).unwrap();
    assert!(close(&m, &MetricReport { rmse: 2.0, mae: 1.0, cp: 0.8, aiw: 3.0 }));
    assert!(MetricReport::mean(&[]).is_none());
}

#[test]
fn block_counts_follow_groups_and_clusters() {
    let cfg = SpatioTemporalConfig { n_per_time: 40, n_times: 4, ..Default::default() };
    let data = simulate_spatiotemporal(&cfg, 3).unwrap();
    for (groups, k, want) in [(2, 3, 6), (4, 4, 16), (1, 1, 1)] {
        let g = contiguous_time_groups(4, groups).unwrap();
        let blocks = st_blocks(&data, &g, k, 9).unwrap();
        assert_eq!(blocks.n_blocks, want);
        assert!((1..=want).all(|b| !blocks.rows_in(b).is_empty()));
        assert_eq!(blocks, st_blocks(&data, &g, k, 9).unwrap());
    }
    assert!(contiguous_time_groups(4, 5).is_err());
}

#[test]
fn cv_of_a_perfect_predictor_is_exact() {
    let cfg = SpatioTemporalConfig { n_per_time: 30, n_times: 2, ..Default::default() };
    let data = simulate_spatiotemporal(&cfg, 3).unwrap();
    let blocks = st_blocks(&data, &contiguous_time_groups(2, 2).unwrap(), 2, 1).unwrap();
    let report = cv_run(&data, &blocks, |fold| {
        assert_eq!(fold.rows_with(SplitLabel::Test).len() + fold.rows_with(SplitLabel::Train).len(), fold.len());
        Ok((fold.response.clone(), vec![1.0; fold.len()]))
    })
    .unwrap();
    assert_eq!(report.folds.len(), 4);
    for f in &report.folds {
        assert_eq!((f.test.rmse, f.test.cp), (0.0, 1.0));
    }
    let mean_aiw = report.folds.iter().map(|f| f.train.aiw).sum::<f64>() / 4.0;
    assert!((report.mean_train.aiw - mean_aiw).abs() < 1e-12);
}

#[test]
fn forest_learns_signal_and_averaging_reduces_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 400;
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| (6.0 * x1[i]).sin() + 2.0 * x2[i] + 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let x = Features::from_columns(vec![x1, x2]).unwrap();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var_y = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let fit = fit_forest(&x, &y, &ForestConfig { n_trees: 200, seed: 1, ..Default::default() }).unwrap();
    assert!(fit.oob_mse < 0.3 * var_y, "oob {} vs var {var_y}", fit.oob_mse);

    // Spread of predictions across forest seeds shrinks with more trees.
    let spread = |trees: usize| -> f64 {
        let preds: Vec<Vec<f64>> = (0..6)
            .map(|s| fit_forest(&x, &y, &ForestConfig { n_trees: trees, seed: s, ..Default::default() }).unwrap().predict(&x).unwrap())
            .collect();
        (0..n)
            .map(|i| {
                let m = preds.iter().map(|p| p[i]).sum::<f64>() / 6.0;
                preds.iter().map(|p| (p[i] - m).powi(2)).sum::<f64>() / 5.0
            })
            .sum::<f64>()
            / n as f64
    };
    let (few, many) = (spread(5), spread(100));
    assert!(many < 0.3 * few, "spread {few} with 5 trees, {many} with 100");
}
