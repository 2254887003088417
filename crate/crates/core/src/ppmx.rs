//! Covariate-dependent partition prior: cohesion `c(S) = α (|S| - 1)!` and a
//! similarity function built from the conjugate auxiliary model
//!
//! ```text
//! x_i | μ, σ² ~ N_p(μ, σ² I)
//! μ | σ²      ~ N_p(μ0, σ0² σ² I)
//! σ²          ~ IG(b1, b2)          (shape-rate)
//! ```
//!
//! The similarity `g(X*)` is the marginal likelihood of a cluster's
//! covariates under that model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::error::{PxgError, Result};
use crate::model::serde_vector;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatePrior {
    #[serde(with = "serde_vector")]
    pub mu0: DVector<f64>,
    pub sigma0sq: f64,
    pub b1: f64,
    pub b2: f64,
}

impl CovariatePrior {
    pub fn new(mu0: DVector<f64>, sigma0sq: f64, b1: f64, b2: f64) -> Result<Self> {
        let p = Self { mu0, sigma0sq, b1, b2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu0.is_empty() || self.mu0.iter().any(|v| !v.is_finite()) {
            return Err(PxgError::invalid("mu0 must be a non-empty finite vector"));
        }
        for (name, v) in [("sigma0sq", self.sigma0sq), ("b1", self.b1), ("b2", self.b2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PxgError::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.mu0.len()
    }
}

/// Per-cluster covariate parameters (μ_j, σ²_j).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateClusterParams {
    pub mu: DVector<f64>,
    pub sigmasq: f64,
}

impl CovariateClusterParams {
    /// log N_p(x; μ, σ² I).
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let p = x.len() as f64;
        let d2 = (x - &self.mu).norm_squared();
        -0.5 * (p * (LN_2PI + self.sigmasq.ln()) + d2 / self.sigmasq)
    }
}

/// Sufficient statistics of a cluster's covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateStats {
    pub m: usize,
    pub sum: DVector<f64>,
    pub sum_sq: f64,
}

impl CovariateStats {
    pub fn empty(p: usize) -> Self {
        Self { m: 0, sum: DVector::zeros(p), sum_sq: 0.0 }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.m += 1;
        self.sum += x;
        self.sum_sq += x.norm_squared();
    }

    pub fn from_rows<'a>(p: usize, rows: impl IntoIterator<Item = &'a DVector<f64>>) -> Self {
        let mut s = Self::empty(p);
        for x in rows {
            s.push(x);
        }
        s
    }

    /// Statistics of the rows of an m x p matrix.
    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        let mut s = Self::empty(x.ncols());
        for i in 0..x.nrows() {
            s.push(&x.row(i).transpose());
        }
        s
    }
}

/// Conjugate posterior of (μ, σ²): σ² ~ IG(b1*, b2*), μ | σ² ~ N(μ*, shrink σ² I).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePosterior {
    pub mu_star: DVector<f64>,
    pub shrink: f64,
    pub b1_star: f64,
    pub b2_star: f64,
}

/// log c(S) = log α + log Γ(|S|).
pub fn log_cohesion(cluster_size: usize, alpha: f64) -> Result<f64> {
    if cluster_size == 0 {
        return Err(PxgError::invalid("cohesion is undefined for an empty cluster"));
    }
    if !(alpha > 0.0) {
        return Err(PxgError::invalid("alpha must be positive"));
    }
    Ok(alpha.ln() + ln_factorial(cluster_size as u64 - 1))
}

pub fn covariate_posterior_stats(stats: &CovariateStats, prior: &CovariatePrior) -> CovariatePosterior {
    let m = stats.m as f64;
    let p = prior.p() as f64;
    let s0 = prior.sigma0sq;
    let shrink = s0 / (m * s0 + 1.0);
    let lin = &stats.sum + &prior.mu0 / s0;
    let mu_star = &lin * shrink;
    let b1_star = m * p / 2.0 + prior.b1;
    let bracket = stats.sum_sq + prior.mu0.norm_squared() / s0 - lin.dot(&mu_star);
    // The bracket is a sum of squares; clamp away rounding below zero.
    let b2_star = prior.b2 + 0.5 * bracket.max(0.0);
    CovariatePosterior { mu_star, shrink, b1_star, b2_star }
}

/// Posterior quantities for the covariates `x_star` (m x p, m may be 0).
pub fn covariate_posterior(x_star: &DMatrix<f64>, prior: &CovariatePrior) -> Result<CovariatePosterior> {
    if x_star.nrows() > 0 && x_star.ncols() != prior.p() {
        return Err(PxgError::dim("covariate columns do not match mu0"));
    }
    let stats = if x_star.nrows() == 0 {
        CovariateStats::empty(prior.p())
    } else {
        CovariateStats::from_matrix(x_star)
    };
    Ok(covariate_posterior_stats(&stats, prior))
}

/// log g(X*) in closed form:
///
/// ```text
/// -(mp/2) log 2π - (p/2) log(mσ0² + 1)
///   + b1 log b2 - b1* log b2* + log Γ(b1*) - log Γ(b1)
/// ```
pub fn log_similarity_stats(stats: &CovariateStats, prior: &CovariatePrior) -> f64 {
    let m = stats.m as f64;
    let p = prior.p() as f64;
    let post = covariate_posterior_stats(stats, prior);
    -0.5 * m * p * LN_2PI - 0.5 * p * (m * prior.sigma0sq + 1.0).ln() + prior.b1 * prior.b2.ln()
        - post.b1_star * post.b2_star.ln()
        + ln_gamma(post.b1_star)
        - ln_gamma(prior.b1)
}

pub fn log_similarity(x_star: &DMatrix<f64>, prior: &CovariatePrior) -> Result<f64> {
    if x_star.nrows() == 0 {
        return Err(PxgError::invalid("similarity needs at least one covariate row"));
    }
    if x_star.ncols() != prior.p() {
        return Err(PxgError::dim("covariate columns do not match mu0"));
    }
    Ok(log_similarity_stats(&CovariateStats::from_matrix(x_star), prior))
}

/// Draws σ² ~ IG(b1*, b2*) then μ ~ N_p(μ*, shrink σ² I).
pub fn draw_covariate_params<R: Rng + ?Sized>(post: &CovariatePosterior, rng: &mut R) -> CovariateClusterParams {
    let sigmasq = draw_inverse_gamma(post.b1_star, post.b2_star, rng);
    let sd = (post.shrink * sigmasq).sqrt();
    let mu = DVector::from_fn(post.mu_star.len(), |i, _| {
        let z: f64 = StandardNormal.sample(rng);
        post.mu_star[i] + sd * z
    });
    CovariateClusterParams { mu, sigmasq }
}

/// Prior draw, used for empty clusters.
pub fn draw_prior_params<R: Rng + ?Sized>(prior: &CovariatePrior, rng: &mut R) -> CovariateClusterParams {
    draw_covariate_params(&covariate_posterior_stats(&CovariateStats::empty(prior.p()), prior), rng)
}

/// Inverse-gamma draw, shape-rate convention (density ∝ x^{-a-1} e^{-b/x}).
pub fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn prior1() -> CovariatePrior {
        CovariatePrior::new(DVector::from_element(1, 0.0), 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn cohesion_values() {
        assert_eq!(log_cohesion(1, 1.0).unwrap(), 0.0);
        assert!((log_cohesion(4, 1.0).unwrap() - 6f64.ln()).abs() < 1e-13);
        assert!((log_cohesion(3, 2.0).unwrap() - 4f64.ln()).abs() < 1e-13);
        assert!(log_cohesion(0, 1.0).is_err());
    }

    #[test]
    fn posterior_hand_substitution() {
        let x = DMatrix::from_element(1, 1, 2.0);
        let post = covariate_posterior(&x, &prior1()).unwrap();
        assert!((post.mu_star[0] - 1.0).abs() < 1e-15);
        assert!((post.shrink - 0.5).abs() < 1e-15);
        assert!((post.b1_star - 1.5).abs() < 1e-15);
        assert!((post.b2_star - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_cluster_returns_prior() {
        let prior = CovariatePrior::new(DVector::from_vec(vec![0.3, -1.0]), 2.5, 2.0, 1.5).unwrap();
        let post = covariate_posterior(&DMatrix::zeros(0, 2), &prior).unwrap();
        assert_eq!(post.mu_star, prior.mu0);
        assert_eq!(post.shrink, prior.sigma0sq);
        assert_eq!(post.b1_star, prior.b1);
        assert_eq!(post.b2_star, prior.b2);
    }

    #[test]
    fn inverse_gamma_mean_scales_with_rate() {
        let mut rng = substream(3, &[]);
        let post = |b2| CovariatePosterior {
            mu_star: DVector::zeros(1),
            shrink: 1.0,
            b1_star: 3.0,
            b2_star: b2,
        };
        let mean = |b2: f64, rng: &mut _| -> f64 {
            (0..10_000).map(|_| draw_covariate_params(&post(b2), rng).sigmasq).sum::<f64>() / 1e4
        };
        let m1 = mean(1.0, &mut rng);
        let m10 = mean(10.0, &mut rng);
        let m100 = mean(100.0, &mut rng);
        // IG(3, b) mean = b / 2
        assert!((m1 / 0.5 - 1.0).abs() < 0.1);
        assert!((m10 / 5.0 - 1.0).abs() < 0.1);
        assert!((m100 / 50.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn similarity_is_finite_with_duplicates() {
        let prior = prior1();
        let base = DMatrix::from_column_slice(3, 1, &[0.1, 0.4, -0.2]);
        let mut dup = DMatrix::zeros(4, 1);
        dup.view_mut((0, 0), (3, 1)).copy_from(&base);
        dup[(3, 0)] = 0.4;
        let a = log_similarity(&base, &prior).unwrap();
        let b = log_similarity(&dup, &prior).unwrap();
        assert!((a - b).is_finite());
    }
}
