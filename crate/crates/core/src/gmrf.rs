//! Precision builders for the random-effect families: SPDE-Matérn (α = 2),
//! AR(1), first/second-order random walks, IID and the separable
//! AR(1) × SPDE interaction.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::FemMatrices;
use crate::sparse::SparseSymMatrix;

/// Diagonal jitter added to intrinsic random-walk precisions.
pub const RW_JITTER: f64 = 1e-5;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `κ = √8 / ρ`.
pub fn spde_kappa(rho: f64) -> f64 {
    8f64.sqrt() / rho
}

/// `τ = 1 / (2√π κ σ)`, giving marginal standard deviation `σ`.
pub fn spde_tau(kappa: f64, sigma: f64) -> f64 {
    1.0 / (2.0 * PI.sqrt() * kappa * sigma)
}

/// The three SPDE building blocks `C`, `G` and `G C⁻¹ G` aligned on one
/// fixed pattern, so `Q(ρ, σ)` is a per-entry linear combination.
#[derive(Debug, Clone)]
pub struct SpdeStructure {
    pattern: SparseSymMatrix,
    c: Vec<f64>,
    g: Vec<f64>,
    gcg: Vec<f64>,
}

impl SpdeStructure {
    pub fn new(fem: &FemMatrices) -> Result<Self> {
        let n = fem.c.dim();
        let cdiag = fem.c.diag();
        if let Some(i) = cdiag.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateMesh(format!("vertex {i} has no incident area")));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in fem.g.iter() {
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        let mut trip = Vec::new();
        for (k, row) in rows.iter().enumerate() {
            for &(i, gik) in row {
                for &(j, gkj) in row {
                    if i >= j {
                        trip.push((i, j, gik * gkj / cdiag[k]));
                    }
                }
            }
        }
        let gcg_m = SparseSymMatrix::from_triplets(n, &trip)?;
        let pattern = gcg_m.add(&fem.g)?.add(&fem.c)?;
        let mut c = vec![0.0; pattern.nnz()];
        let mut g = vec![0.0; pattern.nnz()];
        let mut gcg = vec![0.0; pattern.nnz()];
        let slot = |i, j| pattern.position(i, j).expect("pattern is a union");
        for (i, j, v) in fem.c.iter() {
            c[slot(i, j)] += v;
        }
        for (i, j, v) in fem.g.iter() {
            g[slot(i, j)] += v;
        }
        for (i, j, v) in gcg_m.iter() {
            gcg[slot(i, j)] += v;
        }
        Ok(Self { pattern, c, g, gcg })
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    /// `Q = τ²(κ⁴C + 2κ²G + G C⁻¹ G)`.
    pub fn precision(&self, rho: f64, sigma: f64) -> Result<SparseSymMatrix> {
        check_positive("rho", rho)?;
        check_positive("sigma", sigma)?;
        let kappa = spde_kappa(rho);
        let tau = spde_tau(kappa, sigma);
        let (k2, t2) = (kappa * kappa, tau * tau);
        let mut q = self.pattern.clone();
        for (p, v) in q.values_mut().iter_mut().enumerate() {
            *v = t2 * (k2 * k2 * self.c[p] + 2.0 * k2 * self.g[p] + self.gcg[p]);
        }
        Ok(q)
    }
}

/// SPDE-Matérn precision on the mesh behind `fem`.
pub fn spde_matern_precision(fem: &FemMatrices, rho: f64, sigma: f64) -> Result<SparseSymMatrix> {
    SpdeStructure::new(fem)?.precision(rho, sigma)
}

/// Stationary AR(1) precision with innovation standard deviation
/// `sigma_innov`.
pub fn ar1_precision(len: usize, a: f64, sigma_innov: f64) -> Result<SparseSymMatrix> {
    if len < 2 {
        return Err(Error::InvalidParameter(format!("AR1 length must be at least 2, got {len}")));
    }
    if !(a.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("AR1 coefficient must lie in (-1, 1), got {a}")));
    }
    check_positive("sigma_innov", sigma_innov)?;
    let s = 1.0 / (sigma_innov * sigma_innov);
    let mut t = Vec::with_capacity(2 * len);
    for i in 0..len {
        let d = if i == 0 || i + 1 == len { 1.0 } else { 1.0 + a * a };
        t.push((i, i, d * s));
        if i > 0 {
            t.push((i, i - 1, -a * s));
        }
    }
    SparseSymMatrix::from_triplets(len, &t)
}

/// `DᵀD` for the difference operator of the given order (1 or 2), without
/// jitter.
pub fn rw_structure(order: usize, len: usize) -> Result<SparseSymMatrix> {
    let stencil: &[f64] = match order {
        1 => &[-1.0, 1.0],
        2 => &[1.0, -2.0, 1.0],
        _ => return Err(Error::InvalidParameter(format!("random-walk order {order} unsupported"))),
    };
    if len < order + 2 {
        return Err(Error::InvalidParameter(format!(
            "RW{order} needs at least {} nodes, got {len}",
            order + 2
        )));
    }
    let mut t = Vec::new();
    for r in 0..len - order {
        for (a, &va) in stencil.iter().enumerate() {
            for (b, &vb) in stencil.iter().enumerate().take(a + 1) {
                t.push((r + a, r + b, va * vb));
            }
        }
    }
    SparseSymMatrix::from_triplets(len, &t)
}

/// `τ DᵀD + RW_JITTER·I` for the first-order random walk.
pub fn rw1_precision(len: usize, tau: f64) -> Result<SparseSymMatrix> {
    check_positive("tau", tau)?;
    Ok(rw_structure(1, len)?.scale(tau).add_diagonal(RW_JITTER))
}

/// `τ DᵀD + RW_JITTER·I` for the second-order random walk.
pub fn rw2_precision(len: usize, tau: f64) -> Result<SparseSymMatrix> {
    check_positive("tau", tau)?;
    Ok(rw_structure(2, len)?.scale(tau).add_diagonal(RW_JITTER))
}

pub fn iid_precision(len: usize, tau: f64) -> Result<SparseSymMatrix> {
    if len == 0 {
        return Err(Error::InvalidDimension("IID effect needs at least one node".into()));
    }
    check_positive("tau", tau)?;
    Ok(SparseSymMatrix::diagonal(&vec![tau; len]))
}

/// `AR1(T, a, 1) ⊗ Q_space`, time-major: node `t·m + v`. A single time
/// point returns `Q_space` itself.
pub fn st_separable_precision(q_space: &SparseSymMatrix, a: f64, n_times: usize) -> Result<SparseSymMatrix> {
    if n_times == 1 {
        if !(a.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("AR1 coefficient must lie in (-1, 1), got {a}")));
        }
        return Ok(q_space.clone());
    }
    Ok(ar1_precision(n_times, a, 1.0)?.kron(q_space))
}

/// `log |AR1(T, a, 1)| = log(1 − a²)` for `T ≥ 2`.
pub fn ar1_log_det(n_times: usize, a: f64) -> f64 {
    if n_times < 2 {
        0.0
    } else {
        (1.0 - a * a).ln()
    }
}

/// Modified Bessel function of the second kind, order one, for `x > 0`.
///
/// Trapezoidal rule on `K₁(x) = ∫₀^∞ exp(−x cosh t) cosh t dt`; the
/// integrand is entire and decays doubly exponentially, so the rule is
/// accurate to rounding once the step resolves the peak width `1/√x`.
pub fn bessel_k1(x: f64) -> f64 {
    if !(x > 0.0) {
        return if x == 0.0 { f64::INFINITY } else { f64::NAN };
    }
    if x > 700.0 {
        return 0.0;
    }
    let h = 0.1f64.min(0.5 / x.sqrt());
    // Beyond t_max the scaled integrand is below e^{-40}.
    let t_max = (1.0 + 40.0 / x).acosh();
    let steps = (t_max / h).ceil() as usize;
    let mut sum = 0.5;
    for k in 1..=steps {
        let t = k as f64 * h;
        let ch = t.cosh();
        sum += (-x * (ch - 1.0)).exp() * ch;
    }
    sum * h * (-x).exp()
}

/// Matérn covariance with `ν = 1`: `σ²(κh)K₁(κh)`, `κ = √8/ρ`.
pub fn matern_covariance(h: f64, sigma2: f64, rho: f64) -> f64 {
    let u = spde_kappa(rho) * h.abs();
    if u < 1e-12 {
        sigma2
    } else {
        sigma2 * u * bessel_k1(u)
    }
}
