//! Random-effect families as seen by the LGM: node count, hyperparameter
//! slots on the internal scale, precision, log-determinant and log prior.

use std::sync::Arc;

use super::priors::{ar_from_internal, ar_to_internal, LogGammaPrior, NormalPrior, PcMaternPrior};
use crate::error::{Error, Result};
use crate::gmrf::{self, SpdeStructure};
use crate::sparse::{SparseMatrix, SparseSymMatrix, SymbolicCholesky};

/// Precision of an IID block: fixed, or a hyperparameter with a prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IidPrecision {
    Fixed(f64),
    Random(LogGammaPrior),
}

#[derive(Debug, Clone)]
pub enum EffectModel {
    /// Hyperparameters `(log ρ, log σ)`.
    Spde { spde: Arc<SpdeStructure>, prior: PcMaternPrior },
    /// AR(1) in time with SPDE innovations, time-major nodes.
    /// Hyperparameters `(log ρ, log σ, θ_a)`.
    SeparableSt { spde: Arc<SpdeStructure>, n_times: usize, prior: PcMaternPrior, ar_prior: NormalPrior },
    /// Hyperparameters `(log τ, θ_a)` with `τ` the innovation precision.
    Ar1 { len: usize, prec_prior: LogGammaPrior, ar_prior: NormalPrior },
    /// Hyperparameter `log τ`.
    Rw1 { len: usize, prior: LogGammaPrior },
    /// Hyperparameter `log τ`.
    Rw2 { len: usize, prior: LogGammaPrior },
    /// No hyperparameter when fixed, otherwise `log τ`.
    Iid { len: usize, precision: IidPrecision },
}

impl EffectModel {
    pub fn size(&self) -> usize {
        match self {
            Self::Spde { spde, .. } => spde.dim(),
            Self::SeparableSt { spde, n_times, .. } => spde.dim() * n_times,
            Self::Ar1 { len, .. } | Self::Rw1 { len, .. } | Self::Rw2 { len, .. } | Self::Iid { len, .. } => *len,
        }
    }

    pub fn hyper_names(&self) -> Vec<&'static str> {
        match self {
            Self::Spde { .. } => vec!["log_range", "log_sigma"],
            Self::SeparableSt { .. } => vec!["log_range", "log_sigma", "ar_internal"],
            Self::Ar1 { .. } => vec!["log_precision", "ar_internal"],
            Self::Rw1 { .. } | Self::Rw2 { .. } => vec!["log_precision"],
            Self::Iid { precision: IidPrecision::Fixed(_), .. } => vec![],
            Self::Iid { precision: IidPrecision::Random(_), .. } => vec!["log_precision"],
        }
    }

    pub fn n_hyper(&self) -> usize {
        self.hyper_names().len()
    }

    /// Starting point for the optimizer when no warm start is given.
    pub fn default_init(&self) -> Vec<f64> {
        match self {
            Self::Spde { prior, .. } => vec![(2.5 * prior.rho0).ln(), prior.sigma0.ln()],
            Self::SeparableSt { prior, .. } => vec![(2.5 * prior.rho0).ln(), prior.sigma0.ln(), ar_to_internal(0.5)],
            Self::Ar1 { .. } => vec![0.0, ar_to_internal(0.5)],
            Self::Rw1 { .. } | Self::Rw2 { .. } => vec![10f64.ln()],
            Self::Iid { precision: IidPrecision::Fixed(_), .. } => vec![],
            Self::Iid { precision: IidPrecision::Random(_), .. } => vec![0.0],
        }
    }

    /// Hyperparameters on their natural scale, named.
    pub fn natural(&self, th: &[f64]) -> Vec<(&'static str, f64)> {
        match self {
            Self::Spde { .. } => vec![("range", th[0].exp()), ("sigma", th[1].exp())],
            Self::SeparableSt { .. } => {
                vec![("range", th[0].exp()), ("sigma", th[1].exp()), ("ar", ar_from_internal(th[2]))]
            }
            Self::Ar1 { .. } => vec![("precision", th[0].exp()), ("ar", ar_from_internal(th[1]))],
            Self::Rw1 { .. } | Self::Rw2 { .. } => vec![("precision", th[0].exp())],
            Self::Iid { precision: IidPrecision::Fixed(t), .. } => vec![("precision", *t)],
            Self::Iid { precision: IidPrecision::Random(_), .. } => vec![("precision", th[0].exp())],
        }
    }

    pub fn precision(&self, th: &[f64]) -> Result<SparseSymMatrix> {
        match self {
            Self::Spde { spde, .. } => spde.precision(th[0].exp(), th[1].exp()),
            Self::SeparableSt { spde, n_times, .. } => {
                let qs = spde.precision(th[0].exp(), th[1].exp())?;
                gmrf::st_separable_precision(&qs, ar_from_internal(th[2]), *n_times)
            }
            Self::Ar1 { len, .. } => gmrf::ar1_precision(*len, ar_from_internal(th[1]), (-0.5 * th[0]).exp()),
            Self::Rw1 { len, .. } => gmrf::rw1_precision(*len, th[0].exp()),
            Self::Rw2 { len, .. } => gmrf::rw2_precision(*len, th[0].exp()),
            Self::Iid { len, precision } => {
                let tau = match precision {
                    IidPrecision::Fixed(t) => *t,
                    IidPrecision::Random(_) => th[0].exp(),
                };
                gmrf::iid_precision(*len, tau)
            }
        }
    }

    pub fn log_prior(&self, th: &[f64]) -> f64 {
        match self {
            Self::Spde { prior, .. } => prior.log_density_internal(th[0], th[1]),
            Self::SeparableSt { prior, ar_prior, .. } => {
                prior.log_density_internal(th[0], th[1]) + ar_prior.log_density(th[2])
            }
            Self::Ar1 { prec_prior, ar_prior, .. } => {
                prec_prior.log_density_internal(th[0]) + ar_prior.log_density(th[1])
            }
            Self::Rw1 { prior, .. } | Self::Rw2 { prior, .. } => prior.log_density_internal(th[0]),
            Self::Iid { precision: IidPrecision::Fixed(_), .. } => 0.0,
            Self::Iid { precision: IidPrecision::Random(p), .. } => p.log_density_internal(th[0]),
        }
    }

    /// Symbolic analysis reused by [`Self::log_det`], for families whose
    /// determinant needs a factorization.
    pub(crate) fn log_det_symbolic(&self) -> Result<Option<SymbolicCholesky>> {
        Ok(match self {
            Self::Spde { spde, prior } | Self::SeparableSt { spde, prior, .. } => {
                let q = spde.precision(2.5 * prior.rho0, prior.sigma0)?;
                Some(SymbolicCholesky::analyze(&q))
            }
            Self::Rw1 { .. } | Self::Rw2 { .. } => {
                Some(SymbolicCholesky::analyze(&self.precision(&self.default_init())?))
            }
            _ => None,
        })
    }

    /// `log |Q(θ)|` given the already built precision `q`.
    pub(crate) fn log_det(&self, th: &[f64], q: &SparseSymMatrix, sym: Option<&SymbolicCholesky>) -> Result<f64> {
        let need = || Error::InvalidParameter("missing symbolic analysis".into());
        match self {
            Self::Spde { .. } | Self::Rw1 { .. } | Self::Rw2 { .. } => Ok(sym.ok_or_else(need)?.factor(q)?.log_det()),
            Self::SeparableSt { spde, n_times, .. } => {
                let qs = spde.precision(th[0].exp(), th[1].exp())?;
                let ld_space = sym.ok_or_else(need)?.factor(&qs)?.log_det();
                let a = ar_from_internal(th[2]);
                Ok(*n_times as f64 * ld_space + spde.dim() as f64 * gmrf::ar1_log_det(*n_times, a))
            }
            Self::Ar1 { len, .. } => {
                let a = ar_from_internal(th[1]);
                Ok(*len as f64 * th[0] + gmrf::ar1_log_det(*len, a))
            }
            Self::Iid { len, .. } => {
                let d = q.values()[0];
                Ok(*len as f64 * d.ln())
            }
        }
    }
}

/// A random effect and its projector block (`n_obs × size`).
#[derive(Debug, Clone)]
pub struct Effect {
    pub name: String,
    pub model: EffectModel,
    pub projector: SparseMatrix,
}

impl Effect {
    pub fn new(name: impl Into<String>, model: EffectModel, projector: SparseMatrix) -> Result<Self> {
        if projector.ncols() != model.size() {
            return Err(Error::DimensionMismatch { expected: model.size(), got: projector.ncols() });
        }
        Ok(Self { name: name.into(), model, projector })
    }
}

/// A fixed-effect design column.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffect {
    pub name: String,
    pub values: Vec<f64>,
}
