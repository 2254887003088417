//! Wishart and G-Wishart sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::constant::{decompose, Decomposition};
use super::GWishartParams;
use crate::error::{PxgError, Result};
use crate::linalg;
use crate::model::{ClusterData, Graph, PrecisionMatrix};

/// Sweep limit for the iterative completion step.
pub const MAX_SWEEPS: usize = 1000;
const COMPLETION_TOL: f64 = 1e-8;

/// Wishart(df, Σ) by the Bartlett decomposition, `E = df Σ`.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, sigma: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let q = sigma.nrows();
    if !(df > q as f64 - 1.0) {
        return Err(PxgError::invalid(format!("Wishart needs df > q - 1, got {df} with q = {q}")));
    }
    let l = linalg::cholesky(sigma)?;
    let mut a = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(df - i as f64).expect("positive degrees of freedom");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = &l * &a;
    let mut k = &la * la.transpose();
    linalg::symmetrize_in_place(&mut k);
    Ok(k)
}

/// Direct G-Wishart sampler: draw `K ~ Wishart(b + q - 1, D^{-1})`, take
/// `Σ = K^{-1}`, and replace it by its maximum-determinant completion whose
/// inverse carries the zero pattern of `graph`.
///
/// Decomposable graphs use the closed-form clique/separator completion. Other
/// graphs cycle node-wise regressions within each connected component, since
/// the completion is block diagonal across components.
pub fn sample_gwishart<R: Rng + ?Sized>(graph: &Graph, params: &GWishartParams, rng: &mut R) -> Result<PrecisionMatrix> {
    let q = params.q();
    if graph.q() != q {
        return Err(PxgError::dim("graph and scale matrix sizes differ"));
    }
    let scale = linalg::spd_inverse(&params.d)?;
    let k = sample_wishart(params.b + q as f64 - 1.0, &scale, rng)?;
    if graph.edge_count() == q * (q - 1) / 2 {
        return PrecisionMatrix::new(k);
    }
    let sigma = linalg::spd_inverse(&k)?;
    let mut omega = match decompose(graph) {
        Some(dec) => decomposable_completion(&dec, &sigma)?,
        None => componentwise_completion(graph, &sigma)?,
    };
    for s in 0..q {
        for t in (s + 1)..q {
            if !graph.has_edge(s, t) {
                omega[(s, t)] = 0.0;
                omega[(t, s)] = 0.0;
            }
        }
    }
    linalg::symmetrize_in_place(&mut omega);
    PrecisionMatrix::new(omega)
}

/// `Ω = Σ_C [Σ_CC^{-1}]^0 - Σ_S [Σ_SS^{-1}]^0`, zero-padded to full size.
fn decomposable_completion(dec: &Decomposition, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = sigma.nrows();
    let mut omega = DMatrix::<f64>::zeros(q, q);
    let mut add = |idx: &[usize], sign: f64| -> Result<()> {
        if idx.is_empty() {
            return Ok(());
        }
        let inv = linalg::spd_inverse(&linalg::submatrix(sigma, idx))?;
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                omega[(i, j)] += sign * inv[(a, b)];
            }
        }
        Ok(())
    };
    for c in &dec.cliques {
        add(c, 1.0)?;
    }
    for s in &dec.separators {
        add(s, -1.0)?;
    }
    Ok(omega)
}

fn components(graph: &Graph) -> Vec<Vec<usize>> {
    let q = graph.q();
    let mut seen = vec![false; q];
    let mut out = Vec::new();
    for start in 0..q {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            for u in graph.neighbors(comp[head]) {
                if !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                }
            }
            head += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn componentwise_completion(graph: &Graph, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = sigma.nrows();
    let mut omega = DMatrix::<f64>::zeros(q, q);
    for comp in components(graph) {
        let local: Vec<(usize, usize)> = graph
            .edges()
            .into_iter()
            .filter_map(|(s, t)| {
                let a = comp.binary_search(&s).ok()?;
                let b = comp.binary_search(&t).ok()?;
                Some((a, b))
            })
            .collect();
        let sub = linalg::submatrix(sigma, &comp);
        let block = if local.len() == comp.len() * (comp.len() - 1) / 2 {
            linalg::spd_inverse(&sub)?
        } else {
            linalg::spd_inverse(&complete(&Graph::from_edges(comp.len(), &local)?, &sub)?)?
        };
        for (a, &i) in comp.iter().enumerate() {
            for (b, &j) in comp.iter().enumerate() {
                omega[(i, j)] = block[(a, b)];
            }
        }
    }
    Ok(omega)
}

/// Maximum-determinant completion of `sigma` whose inverse has zeros on the
/// non-edges of `graph`.
fn complete(graph: &Graph, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = sigma.nrows();
    let neighbors: Vec<Vec<usize>> = (0..q).map(|v| graph.neighbors(v)).collect();
    let mut w = sigma.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        residual = 0.0;
        for j in 0..q {
            let nb = &neighbors[j];
            let mut col = vec![0.0; q];
            if !nb.is_empty() {
                let w_nn = linalg::submatrix(&w, nb);
                let rhs = nalgebra::DVector::from_iterator(nb.len(), nb.iter().map(|&u| sigma[(u, j)]));
                let l = linalg::cholesky(&w_nn)?;
                let beta = linalg::chol_solve(&l, &rhs);
                for (i, c) in col.iter_mut().enumerate() {
                    if i != j {
                        *c = nb.iter().zip(beta.iter()).map(|(&u, b)| w[(i, u)] * b).sum();
                    }
                }
            }
            for i in 0..q {
                if i == j {
                    continue;
                }
                residual = residual.max((w[(i, j)] - col[i]).abs());
                w[(i, j)] = col[i];
                w[(j, i)] = col[i];
            }
        }
        if residual < COMPLETION_TOL {
            return Ok(w);
        }
    }
    Err(PxgError::NonConvergence { sweeps: MAX_SWEEPS, residual })
}

/// Ω ~ G-Wishart_G(b + n, D + Y*^T Y*).
pub fn draw_posterior_omega<R: Rng + ?Sized>(
    graph: &Graph,
    data: &ClusterData,
    params: &GWishartParams,
    rng: &mut R,
) -> Result<PrecisionMatrix> {
    if data.q() != params.q() {
        return Err(PxgError::dim("cluster data and scale matrix sizes differ"));
    }
    sample_gwishart(graph, &params.posterior(data), rng)
}
