//! Normalizing constants `I_G(b, D)`.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::GWishartParams;
use crate::error::{PxgError, Result};
use crate::linalg;
use crate::model::Graph;
use crate::rng::{fnv1a, substream};

const LN_2: f64 = std::f64::consts::LN_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Complete-graph (Wishart) constant on the index set covered by `d`:
/// with `c = dim(d)` and `n = b + c - 1`,
/// `log I = (n c / 2) log 2 + log Γ_c(n/2) - (n/2) log|d|`.
pub fn log_wishart_constant(b: f64, d: &DMatrix<f64>) -> Result<f64> {
    let c = d.nrows();
    if c == 0 {
        return Ok(0.0);
    }
    let n = b + c as f64 - 1.0;
    Ok(0.5 * n * c as f64 * LN_2 + linalg::ln_mv_gamma(c, 0.5 * n) - 0.5 * n * linalg::log_det_spd(d)?)
}

/// Maximal cliques in a running-intersection order with their separators
/// (`separators[k]` pairs with `cliques[k + 1]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub cliques: Vec<Vec<usize>>,
    pub separators: Vec<Vec<usize>>,
}

/// Maximum-cardinality search. Returns `None` when the graph is not chordal.
pub fn decompose(graph: &Graph) -> Option<Decomposition> {
    let q = graph.q();
    let mut numbered = vec![false; q];
    let mut weight = vec![0usize; q];
    let mut order = Vec::with_capacity(q);
    for _ in 0..q {
        let v = (0..q)
            .filter(|&v| !numbered[v])
            .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
            .expect("an unnumbered vertex remains");
        numbered[v] = true;
        order.push(v);
        for u in graph.neighbors(v) {
            if !numbered[u] {
                weight[u] += 1;
            }
        }
    }

    let mut position = vec![0; q];
    for (i, &v) in order.iter().enumerate() {
        position[v] = i;
    }
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(q);
    for (i, &v) in order.iter().enumerate() {
        let parents: Vec<usize> = graph.neighbors(v).into_iter().filter(|&u| position[u] < i).collect();
        for (a, &u) in parents.iter().enumerate() {
            for &w in &parents[a + 1..] {
                if !graph.has_edge(u, w) {
                    return None;
                }
            }
        }
        let mut c = parents;
        c.push(v);
        c.sort_unstable();
        candidates.push(c);
    }

    let is_subset = |a: &[usize], b: &[usize]| a.iter().all(|x| b.contains(x));
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let dominated = candidates
            .iter()
            .enumerate()
            .any(|(j, other)| j != i && other.len() > c.len() && is_subset(c, other));
        let duplicate = cliques.iter().any(|k| k == c);
        if !dominated && !duplicate {
            cliques.push(c.clone());
        }
    }

    let mut separators = Vec::with_capacity(cliques.len().saturating_sub(1));
    let mut seen: Vec<bool> = vec![false; q];
    for (k, c) in cliques.iter().enumerate() {
        if k > 0 {
            separators.push(c.iter().copied().filter(|&v| seen[v]).collect());
        }
        for &v in c {
            seen[v] = true;
        }
    }
    Some(Decomposition { cliques, separators })
}

/// Exact `log I_G(b, D)` for a decomposable graph as the ratio of clique and
/// separator Wishart constants.
pub fn log_norm_constant_decomposable(graph: &Graph, params: &GWishartParams) -> Result<f64> {
    if graph.q() != params.q() {
        return Err(PxgError::dim("graph and scale matrix sizes differ"));
    }
    let dec = decompose(graph).ok_or(PxgError::NotDecomposable)?;
    let mut total = 0.0;
    for c in &dec.cliques {
        total += log_wishart_constant(params.b, &linalg::submatrix(&params.d, c))?;
    }
    for s in &dec.separators {
        total -= log_wishart_constant(params.b, &linalg::submatrix(&params.d, s))?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConstEstimate {
    pub estimate: f64,
    /// Delta-method standard error of the log estimate.
    pub mc_se: f64,
}

/// Monte Carlo estimate of `log I_G(b, D)`.
///
/// Writes `Ω = Φ^T Φ` (upper Cholesky) and `Ψ = Φ T^{-1}` with
/// `D^{-1} = T^T T`. Then
///
/// ```text
/// I_G = Π_i 2^{(b+ν_i)/2} Γ((b+ν_i)/2) (2π)^{ν_i/2} t_ii^{b+ν_i+d_i}
///       · E[exp(-½ Σ_{non-edges r<s} ψ_rs²)]
/// ```
///
/// where `ν_i` (`d_i`) counts neighbours after (before) `i`, `ψ_ii² ~ χ²_{b+ν_i}`,
/// free `ψ_ij ~ N(0, 1)`, and the non-free entries follow from the zero
/// constraints on Ω.
pub fn log_norm_constant_mc<R: Rng + ?Sized>(
    graph: &Graph,
    params: &GWishartParams,
    draws: usize,
    rng: &mut R,
) -> Result<NormConstEstimate> {
    let q = graph.q();
    if q != params.q() {
        return Err(PxgError::dim("graph and scale matrix sizes differ"));
    }
    if draws < 10 {
        return Err(PxgError::invalid("need at least 10 Monte Carlo draws"));
    }
    let b = params.b;
    let sigma = linalg::spd_inverse(&params.d)?;
    let l = linalg::cholesky(&sigma)?;
    // T = L^T, upper triangular.
    let t = |i: usize, j: usize| l[(j, i)];

    let nu: Vec<usize> = (0..q).map(|i| ((i + 1)..q).filter(|&j| graph.has_edge(i, j)).count()).collect();
    let before: Vec<usize> = (0..q).map(|i| (0..i).filter(|&j| graph.has_edge(i, j)).count()).collect();

    let mut log_c = 0.0;
    for i in 0..q {
        let a = b + nu[i] as f64;
        log_c += 0.5 * a * LN_2 + ln_gamma(0.5 * a) + 0.5 * nu[i] as f64 * LN_2PI
            + (b + (nu[i] + before[i]) as f64) * t(i, i).ln();
    }

    let non_free = q * (q - 1) / 2 - graph.edge_count();
    if non_free == 0 {
        return Ok(NormConstEstimate { estimate: log_c, mc_se: 0.0 });
    }

    let chis: Vec<ChiSquared<f64>> = (0..q)
        .map(|i| ChiSquared::new(b + nu[i] as f64).expect("positive degrees of freedom"))
        .collect();
    let mut psi = DMatrix::<f64>::zeros(q, q);
    let mut phi = DMatrix::<f64>::zeros(q, q);
    let mut log_w = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut f = 0.0;
        for r in 0..q {
            for s in r..q {
                if s == r {
                    psi[(r, r)] = chis[r].sample(rng).sqrt();
                    phi[(r, r)] = psi[(r, r)] * t(r, r);
                } else if graph.has_edge(r, s) {
                    psi[(r, s)] = StandardNormal.sample(rng);
                    let mut v = 0.0;
                    for k in r..=s {
                        v += psi[(r, k)] * t(k, s);
                    }
                    phi[(r, s)] = v;
                } else {
                    let mut v = 0.0;
                    for k in 0..r {
                        v += phi[(k, r)] * phi[(k, s)];
                    }
                    let phi_rs = -v / phi[(r, r)];
                    phi[(r, s)] = phi_rs;
                    let mut acc = 0.0;
                    for k in r..s {
                        acc += psi[(r, k)] * t(k, s);
                    }
                    let psi_rs = (phi_rs - acc) / t(s, s);
                    psi[(r, s)] = psi_rs;
                    f += psi_rs * psi_rs;
                }
            }
        }
        log_w.push(-0.5 * f);
    }

    let finite = log_w.iter().filter(|v| v.is_finite()).count();
    if finite != draws {
        return Err(PxgError::Overflow {
            detail: format!("{finite} of {draws} importance weights finite"),
        });
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let m = draws as f64;
    let mean = w.iter().sum::<f64>() / m;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let estimate = log_c + max + mean.ln();
    let mc_se = var.sqrt() / (m.sqrt() * mean);
    if !estimate.is_finite() {
        return Err(PxgError::Overflow { detail: format!("log estimate {estimate}, weight mean {mean:e}") });
    }
    Ok(NormConstEstimate { estimate, mc_se })
}

/// Exact constant when the graph is decomposable, Monte Carlo otherwise.
pub fn log_norm_constant<R: Rng + ?Sized>(
    graph: &Graph,
    params: &GWishartParams,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    match log_norm_constant_decomposable(graph, params) {
        Ok(v) => Ok(v),
        Err(PxgError::NotDecomposable) => Ok(log_norm_constant_mc(graph, params, draws.max(10), rng)?.estimate),
        Err(e) => Err(e),
    }
}

/// Memoized prior constants `log I_G(b, D)` for fixed `(b, D)`.
///
/// Monte Carlo estimates use a generator keyed by the graph, so the cached
/// value is a pure function of the graph regardless of which worker filled
/// the entry first.
#[derive(Debug)]
pub struct NormConstCache {
    params: GWishartParams,
    draws: usize,
    seed: u64,
    map: Mutex<HashMap<Vec<u8>, f64>>,
}

impl NormConstCache {
    pub fn new(params: GWishartParams, draws: usize, seed: u64) -> Self {
        Self { params, draws, seed, map: Mutex::new(HashMap::new()) }
    }

    pub fn params(&self) -> &GWishartParams {
        &self.params
    }

    pub fn log_constant(&self, graph: &Graph) -> Result<f64> {
        let key = graph.upper_bits();
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let mut rng = substream(self.seed, &[0x6e6f_726d, fnv1a(&key)]);
        let v = log_norm_constant(graph, &self.params, self.draws, &mut rng)?;
        self.map.lock().expect("cache lock").insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
