use hybrid_st::gmrf::{
    ar1_log_det, ar1_precision, iid_precision, rw2_precision, spde_matern_precision, st_separable_precision,
};
use hybrid_st::mesh::{build_grid_mesh, fem_matrices, projector, Mesh2D};
use hybrid_st::sim::sample_with_factor;
use hybrid_st::sparse::{cholesky, SparseSymMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dense(q: &SparseSymMatrix) -> DMatrix<f64> {
    let rows = q.to_dense();
    DMatrix::from_fn(q.dim(), q.dim(), |i, j| rows[i][j])
}

fn grid(nx: usize, ny: usize) -> Mesh2D {
    build_grid_mesh([0.0, 2.0], [-1.0, 1.5], nx, ny, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_tiles_its_bounding_box(nx in 2usize..12, ny in 2usize..12) {
        let mesh = grid(nx, ny);
        prop_assert_eq!(mesh.triangles().len(), 2 * (nx - 1) * (ny - 1));
        prop_assert!((0..mesh.triangles().len()).all(|t| mesh.triangle_area(t) > 0.0));
        prop_assert!((mesh.total_area() - 2.0 * 2.5).abs() < 1e-9);
    }

    #[test]
    fn fem_invariants(nx in 2usize..10, ny in 2usize..10) {
        let fem = fem_matrices(&grid(nx, ny)).unwrap();
        let c = fem.c.diag();
        prop_assert!(c.iter().all(|&v| v > 0.0));
        prop_assert!((c.iter().sum::<f64>() - 5.0).abs() < 1e-9);
        let n = fem.g.dim();
        let row_sums = fem.g.mul_vec(&vec![1.0; n]).unwrap();
        prop_assert!(row_sums.iter().all(|s| s.abs() < 1e-10));
        // Positive semi-definite with the constants as null space.
        let eig = dense(&fem.g).symmetric_eigenvalues();
        let mut sorted: Vec<f64> = eig.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(sorted[0].abs() < 1e-9);
        prop_assert!(sorted[1] > 1e-9);
    }

    #[test]
    fn projector_reproduces_points(nx in 2usize..10, ny in 2usize..10, pts in prop::collection::vec((0.0f64..=2.0, -1.0f64..=1.5), 1..30)) {
        let mesh = grid(nx, ny);
        let points: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let a = projector(&mesh, &points).unwrap();
        let ones = a.mul_vec(&vec![1.0; mesh.n_vertices()]).unwrap();
        for (r, p) in points.iter().enumerate() {
            prop_assert!((ones[r] - 1.0).abs() < 1e-12);
            let entries: Vec<(usize, f64)> = a.row(r).collect();
            prop_assert!(entries.len() <= 3);
            prop_assert!(entries.iter().all(|&(_, w)| (-1e-12..=1.0 + 1e-12).contains(&w)));
            for d in 0..2 {
                let rec: f64 = entries.iter().map(|&(v, w)| w * mesh.vertices()[v][d]).sum();
                prop_assert!((rec - p[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fem_ignores_triangle_order(seed in any::<u64>()) {
        let mesh = grid(5, 4);
        let mut tris = mesh.triangles().to_vec();
        let k = tris.len();
        for i in 0..k {
            let j = (seed.wrapping_mul(i as u64 + 7) % k as u64) as usize;
            tris.swap(i, j);
        }
        let shuffled = Mesh2D::new(mesh.vertices().to_vec(), tris).unwrap();
        let (a, b) = (fem_matrices(&mesh).unwrap(), fem_matrices(&shuffled).unwrap());
        prop_assert!((dense(&a.g) - dense(&b.g)).amax() < 1e-12);
        prop_assert!((dense(&a.c) - dense(&b.c)).amax() < 1e-12);
    }

    #[test]
    fn separable_log_det_identity(t in 1usize..6, a in -0.9f64..0.9, n in 2usize..8) {
        let q_space = rw2_precision(n + 4, 1.5).unwrap().add_diagonal(0.1);
        let q = st_separable_precision(&q_space, a, t).unwrap();
        let ld = cholesky(&q).unwrap().log_det();
        let want = (n + 4) as f64 * ar1_log_det(t, a) + t as f64 * cholesky(&q_space).unwrap().log_det();
        prop_assert!((ld - want).abs() < 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn spde_precision_is_symmetric(rho in 0.2f64..2.0, sigma in 0.3f64..3.0) {
        let fem = fem_matrices(&grid(6, 6)).unwrap();
        let q = dense(&spde_matern_precision(&fem, rho, sigma).unwrap());
        prop_assert!((&q - q.transpose()).amax() < 1e-12 * q.amax());
        prop_assert!(q.clone().cholesky().is_some());
    }
}

#[test]
fn ar1_correlation_from_dense_inverse() {
    let cov = dense(&ar1_precision(3, 0.7, 1.0).unwrap()).try_inverse().unwrap();
    let corr = cov[(0, 2)] / (cov[(0, 0)] * cov[(2, 2)]).sqrt();
    assert!((corr - 0.49).abs() < 1e-12);
}

#[test]
fn separable_matches_ar1_recursion_covariance() {
    // Two spatial nodes, two time points: ω₂ = a·ω₁ + ξ₂ with ω₁ stationary.
    let q_space = SparseSymMatrix::from_triplets(2, &[(0, 0, 2.0), (1, 1, 2.0), (1, 0, -0.5)]).unwrap();
    let a = 0.6;
    let sigma = dense(&q_space).try_inverse().unwrap();
    let stationary = &sigma / (1.0 - a * a);
    let mut want = DMatrix::zeros(4, 4);
    want.view_mut((0, 0), (2, 2)).copy_from(&stationary);
    want.view_mut((2, 2), (2, 2)).copy_from(&(&stationary * (a * a) + &sigma));
    want.view_mut((0, 2), (2, 2)).copy_from(&(&stationary * a));
    want.view_mut((2, 0), (2, 2)).copy_from(&(&stationary * a));
    let got = dense(&st_separable_precision(&q_space, a, 2).unwrap()).try_inverse().unwrap();
    assert!((got - want).amax() < 1e-12);
}

#[test]
fn iid_and_ar1_edge_cases() {
    assert_eq!(dense(&iid_precision(3, 2.0).unwrap()), DMatrix::from_diagonal_element(3, 3, 2.0));
    assert_eq!(dense(&ar1_precision(3, 0.0, 1.0).unwrap()), DMatrix::identity(3, 3));
    assert!(ar1_precision(3, 1.0, 1.0).is_err());
}

#[test]
fn spde_interior_variance_is_close_to_sigma2() {
    let mesh = build_grid_mesh([0.0, 1.0], [0.0, 1.0], 40, 40, 0.4).unwrap();
    let q = spde_matern_precision(&fem_matrices(&mesh).unwrap(), 0.3, 1.0).unwrap();
    let f = cholesky(&q).unwrap();
    let var = f.selected_inverse().diagonal();
    let interior: Vec<f64> = (0..mesh.n_vertices())
        .filter(|&v| {
            let [x, y] = mesh.vertices()[v];
            (0.2..=0.8).contains(&x) && (0.2..=0.8).contains(&y)
        })
        .map(|v| var[v])
        .collect();
    assert!(!interior.is_empty());
    for v in interior {
        assert!((v - 1.0).abs() < 0.15, "interior variance {v}");
    }
}

#[test]
fn spde_sample_variance_matches_exact_marginals() {
    let mesh = build_grid_mesh([0.0, 1.0], [0.0, 1.0], 12, 12, 0.3).unwrap();
    let q = spde_matern_precision(&fem_matrices(&mesh).unwrap(), 0.5, 1.0).unwrap();
    let f = cholesky(&q).unwrap();
    let exact = f.selected_inverse().diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 4000;
    let mut acc = vec![0.0; q.dim()];
    for _ in 0..n {
        let x = sample_with_factor(&f, &mut rng);
        acc.iter_mut().zip(&x).for_each(|(a, v)| *a += v * v);
    }
    let mean_ratio: f64 = acc.iter().zip(&exact).map(|(a, e)| a / n as f64 / e).sum::<f64>() / q.dim() as f64;
    assert!((mean_ratio - 1.0).abs() < 0.03, "ratio {mean_ratio}");
}
