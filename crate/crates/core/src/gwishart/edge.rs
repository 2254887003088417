//! Joint update of one edge indicator and the precision entries it touches.
//!
//! Write `a = V \ {t}`, `C = Ω_aa^{-1}` and `k = ω_tt - ω_ta C ω_at`, so that
//! `|Ω| = |Ω_aa| k` and positive definiteness reduces to `k > 0`. Given every
//! other entry of Ω and every other indicator, the posterior kernel in
//! `(g_st, x = ω_st, k)` is
//!
//! ```text
//! α_G^g (1-α_G)^{1-g} / I_{G_g}(b, D) · k^{(b*-2)/2} e^{-D*_tt k / 2}
//!     · exp(-(A x² + 2 B x) / 2)      (x ≡ 0 when g = 0)
//! ```
//!
//! with `A = D*_tt C_ss` and `B = D*_st + D*_tt Σ_{v ≠ s} C_sv ω_vt`.
//! Integrating `x` gives the indicator odds; the move proposes flipping
//! `g_st` with that collapsed acceptance ratio and then draws `(x, k)`
//! exactly from their conditional.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{GWishartParams, NormConstCache};
use crate::error::{PxgError, Result};
use crate::linalg;
use crate::model::{ClusterData, Graph, PrecisionMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMove {
    pub graph: Graph,
    pub omega: PrecisionMatrix,
    pub accepted: bool,
}

/// One edge move on the pair `(s, t)`, `s < t`.
///
/// `constants` supplies prior normalizing constants `log I_G(b, D)` for the
/// prior parameters it was built with.
#[allow(clippy::too_many_arguments)]
pub fn update_edge_and_omega<R: Rng + ?Sized>(
    graph: &Graph,
    omega: &PrecisionMatrix,
    data: &ClusterData,
    alpha_g: f64,
    constants: &NormConstCache,
    edge: (usize, usize),
    rng: &mut R,
) -> Result<EdgeMove> {
    let (s, t) = edge;
    let q = graph.q();
    if s >= t || t >= q {
        return Err(PxgError::invalid(format!("edge ({s}, {t}) must satisfy s < t < q")));
    }
    if omega.q() != q || data.q() != q {
        return Err(PxgError::dim("graph, precision and data sizes differ"));
    }
    let post: GWishartParams = constants.params().posterior(data);
    let m = omega.matrix();

    let a: Vec<usize> = (0..q).filter(|&v| v != t).collect();
    let c = linalg::spd_inverse(&linalg::submatrix(m, &a))?;
    let sa = s; // position of s inside `a`, since s < t
    let dtt = post.d[(t, t)];
    let mut b_coef = post.d[(s, t)];
    for (ia, &v) in a.iter().enumerate() {
        if v != s {
            b_coef += dtt * c[(sa, ia)] * m[(v, t)];
        }
    }
    let a_coef = dtt * c[(sa, sa)];

    let current = graph.has_edge(s, t);
    let mut g0 = graph.clone();
    g0.set_edge(s, t, false);
    let mut g1 = graph.clone();
    g1.set_edge(s, t, true);

    let log_prior_odds = alpha_g.ln() - (1.0 - alpha_g).ln();
    // log P(g = 1 | rest) - log P(g = 0 | rest)
    let log_odds = if log_prior_odds.is_infinite() {
        log_prior_odds
    } else {
        log_prior_odds + constants.log_constant(&g0)? - constants.log_constant(&g1)?
            + 0.5 * (LN_2PI - a_coef.ln())
            + b_coef * b_coef / (2.0 * a_coef)
    };
    let log_accept = if current { -log_odds } else { log_odds };
    let u: f64 = rng.random();
    let accepted = log_accept >= 0.0 || u.ln() < log_accept;
    let new_edge = if accepted { !current } else { current };

    let x = if new_edge {
        let z: f64 = StandardNormal.sample(rng);
        -b_coef / a_coef + z / a_coef.sqrt()
    } else {
        0.0
    };
    let k = Gamma::new(0.5 * post.b, 2.0 / dtt)
        .map_err(|e| PxgError::invalid(format!("gamma parameters: {e}")))?
        .sample(rng);

    let mut out: DMatrix<f64> = m.clone();
    out[(s, t)] = x;
    out[(t, s)] = x;
    let w = nalgebra::DVector::from_iterator(a.len(), a.iter().map(|&v| out[(v, t)]));
    out[(t, t)] = k + w.dot(&(&c * &w));

    let new_graph = if new_edge { g1 } else { g0 };
    match PrecisionMatrix::new(out) {
        Ok(omega) => Ok(EdgeMove { graph: new_graph, omega, accepted }),
        // Rounding can break positive definiteness when k is tiny; keep the
        // current state in that case.
        Err(PxgError::NotPositiveDefinite { .. }) => {
            Ok(EdgeMove { graph: graph.clone(), omega: omega.clone(), accepted: false })
        }
        Err(e) => Err(e),
    }
}
