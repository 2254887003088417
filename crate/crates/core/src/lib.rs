//! Covariate-dependent Gaussian graphical models.
//!
//! Observations `(y_i, x_i)` are clustered by a product partition prior whose
//! similarity term depends on the covariates `x_i`; each cluster carries its
//! own graph and precision matrix for the responses `y_i`. Two likelihood
//! backends are available: the exact Gaussian with G-Wishart priors and a
//! node-wise spike-and-slab pseudo-likelihood.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_late_init)]

pub mod backend;
pub mod error;
pub mod gibbs;
pub mod gwishart;
pub mod linalg;
pub mod model;
pub mod ppmx;
pub mod pseudo;
pub mod rng;
pub mod simgen;
pub mod summary;
pub mod trace;

pub use backend::{BackendOptions, BackendRegistry, GraphBackend, GraphState};
pub use error::{PxgError, Result};
pub use gibbs::{run_chain, Schedule};
pub use model::{
    Allocation, ClusterData, Dataset, EdgeIndicators, Graph, Hyperparameters, NodeRegression, PrecisionMatrix,
};
pub use trace::{Trace, TraceMeta};
