//! Hybrid spatio-temporal inference: sparse latent Gaussian models with
//! SPDE-Matérn and autoregressive/random-walk effects, iteratively coupled
//! to a random-forest residual learner.
//!
//! Module map:
//!
//! - [`sparse`]: symmetric sparse storage, Cholesky, selected inversion.
//! - [`mesh`]: grid triangulations, FEM matrices, barycentric projectors.
//! - [`gmrf`]: precision builders for every random-effect family.
//! - [`lgm`]: Gaussian conditional posterior, marginal likelihood,
//!   hyperparameter optimization and fitted summaries.
//! - [`forest`]: CART regression forest with out-of-bag error.
//! - [`hybrid`]: offset correction (RF1), stress-point correction (RF2) and
//!   Kullback-Leibler stopping rules.
//! - [`sim`]: simulation studies and dataset I/O.
//! - [`metrics`]: predictive metrics, k-means blocks and block CV.
//! - [`experiments`]: model builders and end-to-end study pipelines.

pub mod error;
pub mod experiments;
pub mod forest;
pub mod gmrf;
pub mod hybrid;
pub mod lgm;
pub mod mesh;
pub mod metrics;
pub mod sim;
pub mod sparse;

pub use error::{Error, Result};
pub use experiments::{IntervalBasis, SeedPlan};
pub use forest::{Features, ForestConfig, ForestFit};
pub use hybrid::{Algorithm, HybridConfig, HybridResult, KldVariant};
pub use lgm::{FitOptions, LgmFit, LgmSpec};
pub use metrics::MetricReport;
pub use sim::{SplitLabel, StDataset};
pub use sparse::{CholeskyFactor, SparseMatrix, SparseSymMatrix};
