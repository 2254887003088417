//! Pseudo-likelihood backend: one spike-and-slab Bayesian regression per node.
//!
//! For node `s` with regressors `y_-s`,
//!
//! ```text
//! y_s | y_-s, β_s, τ_s ~ N(y_-s^T β_s, τ_s)
//! β_st | g_st, τ_s      ~ N(0, η_{g_st} τ_s)
//! τ_s                   ~ IG(a1, a2)
//! g_st                  ~ Bernoulli(α_G)
//! ```
//!
//! All data enter through the cluster scatter matrix `Y*^T Y*`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{PxgError, Result};
use crate::linalg;
use crate::model::{regressor_slot, ClusterData, EdgeIndicators, NodeRegression};
use crate::ppmx::draw_inverse_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlab {
    /// Spike variance multiplier.
    pub eta0: f64,
    /// Slab variance multiplier.
    pub eta1: f64,
    pub a1: f64,
    pub a2: f64,
}

impl SpikeSlab {
    pub fn new(eta0: f64, eta1: f64, a1: f64, a2: f64) -> Result<Self> {
        let s = Self { eta0, eta1, a1, a2 };
        s.validate()?;
        Ok(s)
    }

    /// η1 = 1, η0 = 0.01 / q, a1 = a2 = 1.
    pub fn default_for(q: usize) -> Self {
        Self { eta0: 0.01 / q.max(1) as f64, eta1: 1.0, a1: 1.0, a2: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta0", self.eta0), ("eta1", self.eta1), ("a1", self.a1), ("a2", self.a2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PxgError::invalid(format!("{name} must be positive")));
            }
        }
        if self.eta1 / self.eta0 < 100.0 {
            return Err(PxgError::invalid(format!(
                "slab/spike ratio eta1/eta0 = {} must be at least 100",
                self.eta1 / self.eta0
            )));
        }
        Ok(())
    }

    pub fn eta(&self, included: bool) -> f64 {
        if included {
            self.eta1
        } else {
            self.eta0
        }
    }
}

/// Rule turning directed inclusion probabilities into symmetric ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetrizeRule {
    /// max(p_st, p_ts)
    #[default]
    Union,
    /// min(p_st, p_ts)
    Intersection,
}

/// P(g_st = 1 | β_st, τ_s).
pub fn edge_inclusion_probability(beta_st: f64, tau_s: f64, hyper: &SpikeSlab, alpha_g: f64) -> f64 {
    if alpha_g >= 1.0 {
        return 1.0;
    }
    if alpha_g <= 0.0 {
        return 0.0;
    }
    let log_n = |eta: f64| -0.5 * ((eta * tau_s).ln() + beta_st * beta_st / (eta * tau_s));
    let l1 = alpha_g.ln() + log_n(hyper.eta1);
    let l0 = (1.0 - alpha_g).ln() + log_n(hyper.eta0);
    // logistic(l1 - l0), stable in both tails
    let d = l1 - l0;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

pub fn update_edge_indicator<R: Rng + ?Sized>(
    beta_st: f64,
    tau_s: f64,
    hyper: &SpikeSlab,
    alpha_g: f64,
    rng: &mut R,
) -> bool {
    let p = edge_inclusion_probability(beta_st, tau_s, hyper, alpha_g);
    rng.random::<f64>() < p
}

/// Regression design for node `s` extracted from the scatter matrix.
struct NodeDesign {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

fn node_design(s: usize, data: &ClusterData) -> NodeDesign {
    let q = data.q();
    let idx: Vec<usize> = (0..q).filter(|&v| v != s).collect();
    NodeDesign {
        xtx: linalg::submatrix(&data.scatter, &idx),
        xty: DVector::from_iterator(q - 1, idx.iter().map(|&v| data.scatter[(v, s)])),
        yty: data.scatter[(s, s)],
    }
}

fn prior_precision(indicators: &[bool], hyper: &SpikeSlab) -> DVector<f64> {
    DVector::from_iterator(indicators.len(), indicators.iter().map(|&g| 1.0 / hyper.eta(g)))
}

/// (shape, rate) of τ_s | β_s, g_s, Y*.
pub fn tau_posterior(
    s: usize,
    data: &ClusterData,
    beta: &DVector<f64>,
    indicators: &[bool],
    hyper: &SpikeSlab,
) -> Result<(f64, f64)> {
    let q = data.q();
    if beta.len() != q - 1 || indicators.len() != q - 1 || s >= q {
        return Err(PxgError::dim("node regression sizes do not match the data"));
    }
    let d = node_design(s, data);
    let rss = (d.yty - 2.0 * beta.dot(&d.xty) + beta.dot(&(&d.xtx * beta))).max(0.0);
    let a = prior_precision(indicators, hyper);
    let pen: f64 = beta.iter().zip(a.iter()).map(|(b, a)| a * b * b).sum();
    let shape = hyper.a1 + 0.5 * data.n as f64 + 0.5 * (q - 1) as f64;
    let rate = hyper.a2 + 0.5 * rss + 0.5 * pen;
    Ok((shape, rate))
}

pub fn update_tau<R: Rng + ?Sized>(
    s: usize,
    data: &ClusterData,
    beta: &DVector<f64>,
    indicators: &[bool],
    hyper: &SpikeSlab,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = tau_posterior(s, data, beta, indicators, hyper)?;
    Ok(draw_inverse_gamma(shape, rate, rng))
}

/// Posterior of β_s given τ_s: mean `P^{-1} X^T y` and the Cholesky factor of
/// `P = X^T X + A`; the covariance is `τ_s P^{-1}`.
pub struct BetaPosterior {
    pub mean: DVector<f64>,
    pub precision_chol: DMatrix<f64>,
}

pub fn beta_posterior(s: usize, data: &ClusterData, indicators: &[bool], hyper: &SpikeSlab) -> Result<BetaPosterior> {
    let q = data.q();
    if indicators.len() != q - 1 || s >= q {
        return Err(PxgError::dim("node regression sizes do not match the data"));
    }
    let d = node_design(s, data);
    let mut p = d.xtx;
    for (k, a) in prior_precision(indicators, hyper).iter().enumerate() {
        p[(k, k)] += a;
    }
    let l = linalg::cholesky(&p)?;
    let mean = linalg::chol_solve(&l, &d.xty);
    Ok(BetaPosterior { mean, precision_chol: l })
}

pub fn update_beta<R: Rng + ?Sized>(
    s: usize,
    data: &ClusterData,
    tau_s: f64,
    indicators: &[bool],
    hyper: &SpikeSlab,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(tau_s > 0.0) {
        return Err(PxgError::invalid("tau must be positive"));
    }
    let post = beta_posterior(s, data, indicators, hyper)?;
    let z = DVector::from_fn(post.mean.len(), |_, _| StandardNormal.sample(rng));
    // P = L L^T, so L^{-T} z has covariance P^{-1}.
    let noise = linalg::solve_upper_t(&post.precision_chol, &z);
    Ok(post.mean + noise * tau_s.sqrt())
}

/// One Gibbs pass for node `s`: indicators, then τ_s, then β_s.
pub fn update_node<R: Rng + ?Sized>(
    s: usize,
    data: &ClusterData,
    current: &NodeRegression,
    hyper: &SpikeSlab,
    alpha_g: f64,
    rng: &mut R,
) -> Result<NodeRegression> {
    let indicators: Vec<bool> = current
        .beta
        .iter()
        .map(|&b| update_edge_indicator(b, current.tau, hyper, alpha_g, rng))
        .collect();
    let tau = update_tau(s, data, &current.beta, &indicators, hyper, rng)?;
    let beta = update_beta(s, data, tau, &indicators, hyper, rng)?;
    NodeRegression::new(beta, tau, indicators)
}

/// Draw of one node regression from the prior.
pub fn prior_regression<R: Rng + ?Sized>(q: usize, hyper: &SpikeSlab, alpha_g: f64, rng: &mut R) -> NodeRegression {
    let tau = draw_inverse_gamma(hyper.a1, hyper.a2, rng);
    let indicators: Vec<bool> = (0..q - 1).map(|_| rng.random::<f64>() < alpha_g).collect();
    let beta = DVector::from_fn(q - 1, |k, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * (hyper.eta(indicators[k]) * tau).sqrt()
    });
    NodeRegression { beta, tau, indicators }
}

/// Symmetric probabilities with zero diagonal.
pub fn symmetrize(edge_prob: &DMatrix<f64>, rule: SymmetrizeRule) -> DMatrix<f64> {
    let q = edge_prob.nrows();
    DMatrix::from_fn(q, q, |s, t| {
        if s == t {
            0.0
        } else {
            let (a, b) = (edge_prob[(s, t)], edge_prob[(t, s)]);
            match rule {
                SymmetrizeRule::Union => a.max(b),
                SymmetrizeRule::Intersection => a.min(b),
            }
        }
    })
}

/// Log marginal of one node's responses with β and τ integrated out.
pub fn log_node_marginal(s: usize, indicators: &[bool], data: &ClusterData, hyper: &SpikeSlab) -> Result<f64> {
    if data.n == 0 {
        return Ok(0.0);
    }
    let n = data.n as f64;
    let post = beta_posterior(s, data, indicators, hyper)?;
    let d = node_design(s, data);
    let log_det_v0: f64 = indicators.iter().map(|&g| hyper.eta(g).ln()).sum();
    // ln|V_n| = -ln|P|
    let log_det_vn = -linalg::log_det_chol(&post.precision_chol);
    let an = hyper.a1 + 0.5 * n;
    let bn = hyper.a2 + 0.5 * (d.yty - post.mean.dot(&d.xty)).max(0.0);
    Ok(-0.5 * n * LN_2PI + 0.5 * log_det_vn - 0.5 * log_det_v0 + hyper.a1 * hyper.a2.ln() - an * bn.ln()
        + ln_gamma(an)
        - ln_gamma(hyper.a1))
}

/// Σ_s of node marginals given the (directed) indicators.
pub fn log_pseudo_marginal(indicators: &EdgeIndicators, data: &ClusterData, hyper: &SpikeSlab) -> Result<f64> {
    if indicators.q() != data.q() {
        return Err(PxgError::dim("indicator and data sizes differ"));
    }
    let mut total = 0.0;
    for s in 0..data.q() {
        total += log_node_marginal(s, &indicators.row(s), data, hyper)?;
    }
    Ok(total)
}

/// sign(β_st) sqrt(max(0, β_st β_ts)), zero when the signs disagree.
pub fn partial_correlations(regs: &[NodeRegression]) -> DMatrix<f64> {
    let q = regs.len();
    DMatrix::from_fn(q, q, |s, t| {
        if s == t {
            return 1.0;
        }
        let a = regs[s].beta[regressor_slot(s, t)];
        let b = regs[t].beta[regressor_slot(t, s)];
        if a * b <= 0.0 {
            0.0
        } else {
            a.signum() * (a * b).sqrt()
        }
    })
}

/// Symmetric precision-like summary: `1/τ_s` on the diagonal and the average
/// of `-β_st/τ_s` and `-β_ts/τ_t` off it. Not guaranteed positive definite.
pub fn reconstruct_omega(regs: &[NodeRegression]) -> DMatrix<f64> {
    let q = regs.len();
    DMatrix::from_fn(q, q, |s, t| {
        if s == t {
            1.0 / regs[s].tau
        } else {
            let a = regs[s].beta[regressor_slot(s, t)] / regs[s].tau;
            let b = regs[t].beta[regressor_slot(t, s)] / regs[t].tau;
            -0.5 * (a + b)
        }
    })
}
