//! Hyperparameter priors. Every log density here is expressed on the
//! internal (unconstrained) scale the optimizer works in, Jacobian included.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Joint penalized-complexity prior for a 2D Matérn field, calibrated by
/// `P(ρ < ρ0) = 0.5` and `P(σ > σ0) = 0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcMaternPrior {
    pub rho0: f64,
    pub sigma0: f64,
}

impl PcMaternPrior {
    pub fn new(rho0: f64, sigma0: f64) -> Result<Self> {
        if !(rho0 > 0.0 && sigma0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "PC prior thresholds must be positive, got rho0={rho0}, sigma0={sigma0}"
            )));
        }
        Ok(Self { rho0, sigma0 })
    }

    /// Density over `(log ρ, log σ)`.
    pub fn log_density_internal(&self, log_rho: f64, log_sigma: f64) -> f64 {
        let (rho, sigma) = (log_rho.exp(), log_sigma.exp());
        pc_matern_unchecked(rho, sigma, self.rho0, self.sigma0) + log_rho + log_sigma
    }
}

fn pc_matern_unchecked(rho: f64, sigma: f64, rho0: f64, sigma0: f64) -> f64 {
    let lam_rho = -(0.5f64.ln()) * rho0;
    let lam_sigma = -(0.5f64.ln()) / sigma0;
    lam_rho.ln() - 2.0 * rho.ln() - lam_rho / rho + lam_sigma.ln() - lam_sigma * sigma
}

/// Joint PC prior density of `(ρ, σ)` on the natural scale:
/// `log λ_ρ − 2 log ρ − λ_ρ/ρ + log λ_σ − λ_σ σ` with `λ_ρ = ln 2 · ρ0` and
/// `λ_σ = ln 2 / σ0`.
pub fn pc_prior_matern_logdensity(rho: f64, sigma: f64, rho0: f64, sigma0: f64) -> Result<f64> {
    if !(rho > 0.0 && sigma > 0.0 && rho0 > 0.0 && sigma0 > 0.0) {
        return Err(Error::InvalidParameter("PC prior arguments must be positive".into()));
    }
    Ok(pc_matern_unchecked(rho, sigma, rho0, sigma0))
}

/// Gamma(shape, rate) prior on a precision `τ`, evaluated over `log τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for LogGammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 5e-5 }
    }
}

impl LogGammaPrior {
    pub fn log_density_internal(&self, log_tau: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + self.shape * log_tau - self.rate * log_tau.exp()
    }
}

/// Normal prior placed directly on an internal-scale parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPrior {
    pub mean: f64,
    pub variance: f64,
}

impl NormalPrior {
    /// Default for the AR coefficient on its `log((1 + a)/(1 − a))` scale.
    pub fn ar_default() -> Self {
        Self { mean: 0.0, variance: 0.15 }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.variance).ln() - d * d / (2.0 * self.variance)
    }
}

/// `a = tanh(θ/2)`, the inverse of `θ = log((1 + a)/(1 − a))`.
pub fn ar_from_internal(theta: f64) -> f64 {
    (0.5 * theta).tanh()
}

pub fn ar_to_internal(a: f64) -> f64 {
    ((1.0 + a) / (1.0 - a)).ln()
}
