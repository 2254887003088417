//! G-Wishart distribution machinery for the Gaussian likelihood backend.
//!
//! Density convention: for a graph `G` and `Ω` in the cone of positive
//! definite matrices with zeros on the non-edges of `G`,
//!
//! ```text
//! p(Ω | G) = |Ω|^{(b-2)/2} exp(-tr(DΩ)/2) / I_G(b, D)
//! ```
//!
//! which is conjugate to `N(0, Ω^{-1})` with update `(b + n, D + Y^T Y)`.
//! For the complete graph this is Wishart with `b + q - 1` degrees of freedom
//! and scale `D^{-1}`.

mod constant;
mod edge;
mod sampler;

pub use constant::{
    decompose, log_norm_constant, log_norm_constant_decomposable, log_norm_constant_mc,
    log_wishart_constant, Decomposition, NormConstCache, NormConstEstimate,
};
pub use edge::{update_edge_and_omega, EdgeMove};
pub use sampler::{draw_posterior_omega, sample_gwishart, sample_wishart, MAX_SWEEPS};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PxgError, Result};
use crate::linalg;
use crate::model::{serde_matrix, ClusterData, Graph, PrecisionMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GWishartParams {
    /// Degrees of freedom, `b > 2`.
    pub b: f64,
    /// Scale matrix, symmetric positive definite.
    #[serde(with = "serde_matrix")]
    pub d: DMatrix<f64>,
}

impl GWishartParams {
    pub fn new(b: f64, d: DMatrix<f64>) -> Result<Self> {
        let p = Self { b, d };
        p.validate()?;
        Ok(p)
    }

    pub fn default_for(q: usize) -> Self {
        Self { b: 3.0, d: DMatrix::identity(q, q) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 2.0) || !self.b.is_finite() {
            return Err(PxgError::invalid(format!("G-Wishart degrees of freedom must exceed 2, got {}", self.b)));
        }
        if !linalg::is_symmetric(&self.d, 1e-10) {
            return Err(PxgError::invalid("G-Wishart scale D must be symmetric"));
        }
        linalg::cholesky(&self.d)?;
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.d.nrows()
    }

    /// Conjugate update `(b + n, D + Y^T Y)`.
    pub fn posterior(&self, data: &ClusterData) -> Self {
        Self { b: self.b + data.n as f64, d: &self.d + &data.scatter }
    }
}

/// ((b-2)/2) log|Ω| - tr(DΩ)/2.
pub fn log_unnorm_density(omega: &PrecisionMatrix, graph: &Graph, params: &GWishartParams) -> Result<f64> {
    omega.check_graph(graph)?;
    if params.q() != omega.q() {
        return Err(PxgError::dim("scale matrix and precision sizes differ"));
    }
    let logdet = linalg::log_det_spd(omega.matrix())?;
    let tr = params.d.component_mul(omega.matrix()).sum();
    Ok(0.5 * (params.b - 2.0) * logdet - 0.5 * tr)
}

/// log p(Y* | G) with Ω integrated out:
/// `-(n q / 2) log 2π + log I_G(b + n, D + Y*^T Y*) - log I_G(b, D)`.
///
/// Exact for decomposable graphs, Monte Carlo with `draws` samples otherwise.
pub fn log_marginal_gwishart<R: Rng + ?Sized>(
    graph: &Graph,
    data: &ClusterData,
    params: &GWishartParams,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if data.n == 0 {
        return Ok(0.0);
    }
    let q = graph.q() as f64;
    let post = params.posterior(data);
    let num = log_norm_constant(graph, &post, draws, rng)?;
    let den = log_norm_constant(graph, params, draws, rng)?;
    Ok(-0.5 * data.n as f64 * q * LN_2PI + num - den)
}
