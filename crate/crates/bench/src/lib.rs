//! Fixtures shared by the benchmarks.

use hybrid_st::experiments::{spatiotemporal_model, MeshOptions, SeedPlan};
use hybrid_st::gmrf::spde_matern_precision;
use hybrid_st::hybrid::{rf1_features, training_response};
use hybrid_st::forest::Features;
use hybrid_st::lgm::LgmSpec;
use hybrid_st::mesh::{build_grid_mesh, fem_matrices};
use hybrid_st::sim::{simulate_spatiotemporal, SpatioTemporalConfig, StDataset};
use hybrid_st::sparse::SparseSymMatrix;

/// SPDE precision on an `n × n` grid over the unit square.
pub fn spde_precision(n: usize) -> SparseSymMatrix {
    let mesh = build_grid_mesh([0.0, 1.0], [0.0, 1.0], n, n, 0.2).expect("mesh");
    spde_matern_precision(&fem_matrices(&mesh).expect("fem"), 0.3, 1.0).expect("precision")
}

/// The default spatio-temporal dataset with its model.
pub fn spatiotemporal_case() -> (StDataset, LgmSpec, Vec<f64>) {
    let data = simulate_spatiotemporal(&SpatioTemporalConfig::default(), SeedPlan::from_seed(1).data).expect("simulate");
    let (spec, _) = spatiotemporal_model(&data, &MeshOptions::default()).expect("model");
    let y = training_response(&data);
    (data, spec, y)
}

/// RF1 features and a smooth nonlinear target on the spatio-temporal design.
pub fn forest_case() -> (Features, Vec<f64>) {
    let (data, _, _) = spatiotemporal_case();
    let y = data.z1.iter().zip(&data.z2).map(|(a, b)| (3.0 * a).sin() + b * b).collect();
    (rf1_features(&data), y)
}
