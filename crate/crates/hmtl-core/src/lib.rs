//! Joint estimation of per-variable regression weights and sparse precision
//! matrices for hierarchies of multitask regression problems, with the
//! baselines and evaluation harness used to benchmark them on gridded
//! multi-model data.
//!
//! The central fit alternates two convex steps: a quasi-Newton solve for the
//! regression weights of every super-task, and an ADMM solve that jointly
//! estimates all precision matrices under an l1 + cross-super-task group
//! lasso penalty. See [`driver::fit_hmtl`] for the entry point.
//!
//! All numeric code is generic over the working scalar through
//! [`scalar::Scalar`]; the aliases below pin the common instantiations.

pub mod baselines;
pub mod bench;
pub mod data_io;
pub mod driver;
pub mod error;
pub mod model;
pub mod omega;
pub mod scalar;
pub mod synthetic;
pub mod theta;

pub use error::{Error, Result};
pub use model::{
    hmtl_objective, predict, rmse, sample_covariance, FitReport, HierarchicalDataset, HmtlModel,
    Hyperparams, PrecisionSet, SubTaskData, WeightSet,
};
pub use scalar::{real, Scalar};

/// Double-precision model, the default throughout the harness.
pub type HmtlModel64 = model::HmtlModel<f64>;
/// Single-precision model.
pub type HmtlModel32 = model::HmtlModel<f32>;
/// Double-precision dataset.
pub type Dataset64 = model::HierarchicalDataset<f64>;
/// Single-precision dataset.
pub type Dataset32 = model::HierarchicalDataset<f32>;
/// Double-precision penalty weights.
pub type Hyperparams64 = model::Hyperparams<f64>;
